"""Multiscale Cochran-Mantel-Haenszel test of conditional independence."""

from .cmh import (CmhResult, EffectEstimate, chi2_sf_1df, cmh_statistic,
                  effect_estimate, mh_common_log_or, mh_variance,
                  stratum_log_or)
from .multiscan import (ScanConfig, ScanReport, WindowResult, adjusted_alpha,
                        choose_depths, scan, screen, sidak_combine)
from .stratify import Stratification, medtree, target_strata_count
from .tabulate import (Dataset, DyadicTree, IngestError, Window, WindowTable,
                       build_dyadic_tree, ingest, rank_transform, read_csv,
                       tabulate_window)

__version__ = "0.1.0"
