"""Robust optimal liquidation under linear market impact.

Adaptive strategies that stay optimal across martingale price laws, their
closed-form values, and brute-force oracles that check them.
"""

from .costs import (CostBreakdown, ValueReport, realized_cost, reduced_functional, reduced_increments,
                    value_martingale, value_martingale_nu0, value_semimartingale)
from .ensemble import MCConfig, MCEstimate
from .models import (Bachelier, BinomialMartingale, CapabilityError, CompensatedJumpMartingale, ConstantPrice,
                     GBMDrift, GBMMartingale, OrnsteinUhlenbeck, PriceModel, PricePath, TimeGrid,
                     model_from_dict, sample_paths, simulate_path)
from .montecarlo import Comparison, SweepResult, compare, estimate, robustness_sweep
from .oracle import (euler_lagrange_deterministic, perturbation_check, submartingale_check, tree_dp,
                     tree_oracle_error)
from .strategies import (ExecutionTrajectory, ImpactParams, expected_cost_minimizer, gs_martingale,
                         gs_martingale_nu0, gs_semimartingale, gs_semimartingale_nu0, h_process, make_rule,
                         mean_variance, optimal, vwap)

__version__ = "0.1.0"
