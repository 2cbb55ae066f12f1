"""Distances and moments for finitely supported measures."""
from .dyadic import DyadicPartition, dyadic_upper_bound
from .lp import (LP_CAP, DualWitness, SupportTooLarge, block_polish, net_weights, polish, solve_dual_flow,
                 solve_dual_lp, wasserstein_lower_witness, wasserstein_lp)
from .moments import collision_moment_bound, correlation_check, lambda_k
from .transport import emd, reweight, w1_ot

__all__ = [
    "LP_CAP", "DualWitness", "block_polish", "DyadicPartition", "SupportTooLarge", "collision_moment_bound",
    "correlation_check", "dyadic_upper_bound", "emd", "polish", "lambda_k", "net_weights", "reweight",
    "solve_dual_flow", "solve_dual_lp", "w1_ot", "wasserstein_lower_witness", "wasserstein_lp",
]
