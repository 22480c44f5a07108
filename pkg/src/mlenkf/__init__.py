"""Multilevel ensemble Kalman filtering for SDE-driven signals."""

from .enkf import Ensemble, enkf_estimate, enkf_run, enkf_step, sample_cov, sample_mean
from .errors import ConvergenceError, InstabilityError, InvalidInputError, NotSPDError
from .integrate import CoupledPair, LevelGrid, em_step, milstein_step, propagate_level, propagate_pair
from .kalman import GaussianMoments, kf_predict, kf_run, kf_update
from .models import LinearSignal, ObservationModel, SdeModel, gbm_model, observe, ou_model
from .multilevel import (Allocation, MultilevelEnsemble, Rates, allocate, allocate_for_budget,
                         ml_cov, ml_estimate, ml_gain, ml_mean, ml_update, mlenkf_run, mlenkf_step)
from .trace import CostRecord, FilterTrace

__version__ = "0.1.0"
