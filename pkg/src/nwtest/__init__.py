"""Neural Wasserstein two-sample testing.

Learns sparse discriminative projections on the Stiefel manifold by
alternating optimal transport with manifold proximal-gradient steps,
trains Lipschitz-controlled ReLU witness networks on the projected data,
and aggregates the candidate statistics into a max-type test with a
pivotal max-of-Gaussians null calibration.
"""

from .pipeline import (CandidateSpec, MultiSplitReport, TestConfig,
                       aggregate_pvalues, multi_split_test,
                       run_single_split_test, split_sample)
from .simbench import (ModelSpec, PowerCell, energy_permutation_test,
                       gen_model, mmd_permutation_test, power_study)
from .statistic import TestReport, max_abs_gauss_quantile, max_gauss_pvalue
from .stiefel import ManPGOptions, l0_fit_projection, manpg_fit_projection
from .transport import (empirical_projected_w1, projected_w1_bruteforce,
                        solve_discrete_ot, wasserstein1_1d)
from .witness import NetworkArchitecture, TrainOptions, WitnessNetwork, train_witness

__version__ = "0.1.0"

__all__ = [
    "CandidateSpec", "MultiSplitReport", "TestConfig", "aggregate_pvalues",
    "multi_split_test", "run_single_split_test", "split_sample",
    "ModelSpec", "PowerCell", "energy_permutation_test", "gen_model",
    "mmd_permutation_test", "power_study",
    "TestReport", "max_abs_gauss_quantile", "max_gauss_pvalue",
    "ManPGOptions", "l0_fit_projection", "manpg_fit_projection",
    "empirical_projected_w1", "projected_w1_bruteforce", "solve_discrete_ot",
    "wasserstein1_1d",
    "NetworkArchitecture", "TrainOptions", "WitnessNetwork", "train_witness",
]
