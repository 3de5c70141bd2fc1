"""Quantile hedging of Bermudan claims via monotone schemes for
stochastic target problems with controlled loss."""

from .errors import (ConfigurationError, ConvexityError, DomainError,
                     NumericalAbort, QhedgeError, UnsupportedRegimeError,
                     UsageError)
from .model import (CustomDrift, CustomLoss, ExerciseSchedule, IndicatorLoss,
                    LinearPricing, MarketModel, RampLoss, TwoRate, ZeroDrift,
                    black_scholes_model, call_payoff, constant_payoff,
                    digital_payoff, eval_coeffs, lambda_shift,
                    terminal_value_from_loss)
from .hamiltonian import (ControlGrid, OperatorPoint, SphereControl, eval_H,
                          eval_J, lift, script_H, sup_H, sup_J_closed_form)
from .facelift import (FaceliftData, SliceFacelift, facelift_slice,
                       facelift_surface, lower_convex_envelope)

__version__ = "0.1.0"
