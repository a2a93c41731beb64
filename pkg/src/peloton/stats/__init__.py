from .correlation import pearson, standardize_times, zscores
from .distributions import normal_cdf, student_t_cdf, student_t_two_sided
from .lmm import LmmConvergenceError, LmmDataset, LmmError, LmmFit, fit_lmm

__all__ = [
    "LmmConvergenceError",
    "LmmDataset",
    "LmmError",
    "LmmFit",
    "fit_lmm",
    "normal_cdf",
    "pearson",
    "standardize_times",
    "student_t_cdf",
    "student_t_two_sided",
    "zscores",
]
