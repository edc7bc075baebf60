"""scikit-learn style wrapper around the traversability network."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .fsm import FsmConfig
from .gfn import GfnConfig
from .planner import freespace_metrics
from .trainer import TrainConfig, collate, fit, predict
from .validation import check_mask, check_samples


class TraversabilityEstimator(BaseEstimator):
    """Self-supervised traversability estimator.

    ``fit`` takes a sequence of ``Sample`` (frame, footprint and, when
    available, ground-truth normals). The footprint is the only
    traversability label used; ``y`` is ignored.

    Parameters
    ----------
    channels : tuple of int
        Encoder channels per stage.
    fusion_channels : int
        Channels of the fused feature map F(x).
    steps, batch_size, learning_rate, optimizer :
        Optimisation settings, see ``TrainConfig``.
    lambda_ce, lambda_ss, lambda_sn : float
        Loss weights.
    alpha_init : float
        Initial random-walk strength; ``freeze_alpha`` keeps it fixed.
    threshold : float
        Pixels with p_trav > threshold are predicted traversable.
    random_state : int
    """

    def __init__(
        self,
        channels=(16, 32, 64, 128),
        fusion_channels=8,
        steps=1000,
        batch_size=4,
        learning_rate=1e-3,
        optimizer="adaptive_moments",
        lambda_ce=1.0,
        lambda_ss=0.1,
        lambda_sn=1.0,
        alpha_init=0.5,
        freeze_alpha=False,
        threshold=0.5,
        random_state=0,
    ):
        self.channels = channels
        self.fusion_channels = fusion_channels
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.lambda_ce = lambda_ce
        self.lambda_ss = lambda_ss
        self.lambda_sn = lambda_sn
        self.alpha_init = alpha_init
        self.freeze_alpha = freeze_alpha
        self.threshold = threshold
        self.random_state = random_state

    def _configs(self):
        ch = tuple(self.channels)
        gfn = GfnConfig(num_stages=len(ch), channels=ch, strides=(1,) + (2,) * (len(ch) - 1), fusion_channels=self.fusion_channels)
        fsm = FsmConfig(alpha_init=self.alpha_init, freeze_alpha=self.freeze_alpha)
        train = TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            lambda_ce=self.lambda_ce,
            lambda_ss=self.lambda_ss,
            lambda_sn=self.lambda_sn,
            seed=self.random_state,
        )
        return gfn, fsm, train

    def fit(self, X, y=None):
        gfn, fsm, train = self._configs()
        samples = check_samples(X, require_footprint=True, multiple_of=gfn.downsample)
        result = fit(samples, train, gfn, fsm)
        self.model_ = result.model
        self.history_ = result.history
        self.image_shape_ = samples[0].frame.shape
        self.n_features_in_ = 4
        return self

    def _forward(self, X):
        check_is_fitted(self, "model_")
        samples = check_samples(X, require_footprint=False)
        if samples[0].frame.shape != self.image_shape_:
            raise ValueError(f"images are {samples[0].frame.shape}, the estimator was fitted on {self.image_shape_}")
        batch = collate(samples)
        dtype = next(self.model_.parameters()).dtype
        with torch.no_grad():
            return predict(self.model_, batch.x.to(dtype))

    def predict_proba(self, X) -> np.ndarray:
        """Traversability probabilities, shape (n, h, w)."""
        return self._forward(X)["p_trav"][:, 0].double().numpy()

    def predict(self, X) -> np.ndarray:
        """Binary traversability masks, shape (n, h, w)."""
        return self.predict_proba(X) > self.threshold

    def predict_normals(self, X) -> np.ndarray:
        """Unit surface normals in the camera frame, shape (n, 3, h, w)."""
        return self._forward(X)["normals"].double().numpy()

    def score(self, X, y=None) -> float:
        """IoU of predicted traversable pixels against ``y`` or each sample's gt_traversable."""
        pred = self.predict(X)
        if y is None:
            samples = check_samples(X, require_footprint=False)
            if any(s.gt_traversable is None for s in samples):
                raise ValueError("score needs y or samples carrying gt_traversable")
            y = np.stack([np.asarray(s.gt_traversable).reshape(pred.shape[1:]) for s in samples])
        y = check_mask(y, pred.shape, "y")
        return freespace_metrics(pred, y).iou
