"""Enterprise digital-copy simulation and integral-indicator analytics."""
from .errors import (ComparisonError, DigicopyError, InputError, ParseError, ResourceError,
                     SequencingError, StepRangeError)
from .estimators import Blocker, IntegralIndicator
from .indicator import (CorrelationMatrix, CorrelationWindow, IndicatorReport, incremental_indicator,
                        integral_indicator, pairs_from_structure, row_indicator, window_correlation)
from .model import DisturbanceSpec, MatrixSchedule, SystemModel, simulate, step
from .regime import BlockEntry, BlockingSchedule, ControlRegime, apply_blocking, apply_control, parse_schedule
from .scenario import (BlockedCost, ComparisonResult, Objective, Scenario, check_optimality, compare,
                       estimate_blocked_cost, run_pipeline)
from .trajectory import Trajectory

__version__ = "0.1.0"
