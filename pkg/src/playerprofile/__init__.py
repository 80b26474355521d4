"""Player profiling from survival-curve and lifetime-value predictions.

Survival forests predict per-player curves over lifetime, level and
playtime; a two-branch LSTM predicts lifetime value; quantile rules turn
both into lifespan and spending groups.
"""
from .ensemble import EnsembleConfig, EnsembleModel, concordance_index, fit, predict_curve
from .ltv import LtvModel, LtvNetConfig, fit_ltv, predict_ltv
from .segmentation import (LifespanGroup, PlayerProfile, SegmentationConfig, SpendingGroup,
                           classify_lifespan, classify_spending, profile_players, select_skillful)
from .survival import (PopulationStats, SurvivalCurve, curve_quantile, final_probability, kaplan_meier,
                       population_stats)
from .telemetry import (Axis, ChurnPolicy, PlayerEvent, PlayerTimeline, SurvivalDataset,
                        build_sequences, build_survival_dataset, is_churned, parse_event_log,
                        top_spender_threshold)

__version__ = "0.1.0"
