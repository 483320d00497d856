"""Synthetic camera proxy, heteroscedastic regressors and ensemble fusion."""
from .ensemble import Diversity, Ensemble, build_ensemble, ensemble_estimate, fuse_batch, fuse_moments
from .regressor import (
    VAR_EPS,
    HeadwayEstimate,
    RegressorParams,
    forward_batch,
    init_params,
    nll_gradient,
    nll_loss,
    regressor_forward,
)
from .sensor import ObservationPair, SensorModel, clean_features, synth_batch, synth_observe
from .training import TrainHyper, TrainingSet, generate_training_set, train_regressor

__all__ = [
    "Diversity", "Ensemble", "build_ensemble", "ensemble_estimate", "fuse_batch", "fuse_moments",
    "VAR_EPS", "HeadwayEstimate", "RegressorParams", "forward_batch", "init_params",
    "nll_gradient", "nll_loss", "regressor_forward",
    "ObservationPair", "SensorModel", "clean_features", "synth_batch", "synth_observe",
    "TrainHyper", "TrainingSet", "generate_training_set", "train_regressor",
]
