"""recurflow: corrector fields, recurrence diagnostics and small-control
navigation for bounded incompressible velocity fields.

The toolkit builds the Newtonian-potential corrector W that makes the
weighted measure (|x|^2 + alpha^2)^(-p) dx invariant under the corrected
flow, quantifies finite-scale mean drift/flux of fields, verifies
recurrence of corrected flows empirically, and synthesizes small-norm
piecewise-constant controls navigating between arbitrary points.
"""

__version__ = "0.1.0"

from .errors import (ConfigurationError, InputError, IntegrationError,
                     ModelError, RecurflowError)
from .fields import (VectorField, divergence_fd, eval_field, jacobian_fd,
                     load_grid_csv, partial_derivative_field, write_grid_csv)
from .diagnostics import (DriftReport, derivative_drift, drift_sweep,
                          mean_drift_box, mean_flux_box, mean_flux_sphere)
from .corrector import (CorrectorField, PsiParams, QuadratureConfig,
                        ScalingCheck, alpha_sweep, corrector_div_exact,
                        corrector_eval, corrector_scaling_check, measure_ball,
                        psi_eval, psi_grad, radial_moment_check,
                        truncation_radius_for, weight_gradient, weight_value)
from .dynamics import (CorrectedField, FlowConfig, InvarianceReport,
                       PushforwardReport, Trajectory, flow_map,
                       invariance_residual, pushforward_test, rk4_step,
                       rk4_stream)
from .recurrence import (DiscreteSystem, PoissonScanReport, RecurrenceReport,
                         ReturnScanReport, continuous_return_scan,
                         near_return_search, poincare_discrete_check,
                         poisson_stability_scan)
from .control import (ControlSchedule, ReachResult, ReachSpec, VerifyReport,
                      control_set, plan_reach, step1_ball_radius,
                      verify_schedule)

__all__ = [name for name in dir() if not name.startswith("_")]
