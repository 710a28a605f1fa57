"""scikit-learn style front end for training and applying the extractor."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig
from .datasets import Example
from .metrics import si_snr_improvement, trim_to_shortest
from .model import DualPathAVModel
from .trainer import train
from .validation import check_pairs


class AVTargetExtractor(BaseEstimator):
    """Audio-visual target speech extractor with a fit/predict/score interface.

    ``X`` is a sequence of ``(mixture, visual)`` pairs, where ``mixture`` is a
    mono waveform and ``visual`` a (T_v, D_v) feature matrix; ``y`` holds the
    clean target waveforms. ``predict`` returns one extracted waveform per
    pair, ``score`` the mean SI-SNR improvement in dB.

    Architecture hyperparameters mirror :class:`ModelConfig`; the defaults
    give the full-size network.
    """

    def __init__(self, N=3, N_intra=4, N_inter=4, K=160, D_a=256, D_v=512, h=8, D_k=64,
                 D_f=1024, W=16, stride=8, sample_rate=16000, fps=25, attn_half_width=62,
                 positional_encoding=False, collapse="channel", epochs=1, lr=1e-4,
                 clip_norm=5.0, max_steps=None, target_sisnri=None, random_state=0):
        self.N = N
        self.N_intra = N_intra
        self.N_inter = N_inter
        self.K = K
        self.D_a = D_a
        self.D_v = D_v
        self.h = h
        self.D_k = D_k
        self.D_f = D_f
        self.W = W
        self.stride = stride
        self.sample_rate = sample_rate
        self.fps = fps
        self.attn_half_width = attn_half_width
        self.positional_encoding = positional_encoding
        self.collapse = collapse
        self.epochs = epochs
        self.lr = lr
        self.clip_norm = clip_norm
        self.max_steps = max_steps
        self.target_sisnri = target_sisnri
        self.random_state = random_state

    def _config(self) -> ModelConfig:
        fields = ModelConfig.__dataclass_fields__
        return ModelConfig(**{k: v for k, v in self.get_params().items() if k in fields})

    def fit(self, X, y, X_val=None, y_val=None):
        pairs, targets = check_pairs(X, y, self.W, self.D_v)
        items = [Example(m, t, v) for (m, v), t in zip(pairs, targets)]
        val = None
        if X_val is not None:
            vpairs, vtargets = check_pairs(X_val, y_val, self.W, self.D_v)
            val = [Example(m, t, v) for (m, v), t in zip(vpairs, vtargets)]
        self.model_ = DualPathAVModel(self._config(), seed=self.random_state)
        result = train(self.model_, items, val, epochs=self.epochs, seed=self.random_state,
                       lr=self.lr, clip_norm=self.clip_norm, max_steps=self.max_steps,
                       target_val=self.target_sisnri)
        self.loss_curve_ = result.losses
        self.history_ = result.log
        self.n_steps_ = len(result.losses)
        return self

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        return [self.model_.extract(m, v) for m, v in check_pairs(X, None, self.W, self.D_v)]

    def score(self, X, y) -> float:
        pairs, targets = check_pairs(X, y, self.W, self.D_v)
        scores = []
        for (mix, _), est, ref in zip(pairs, self.predict(X), targets):
            est, mix, ref = trim_to_shortest(est, mix, ref)
            scores.append(si_snr_improvement(est, mix, ref))
        return float(np.mean(scores))

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        self.model_.save(path)

    @classmethod
    def from_checkpoint(cls, path) -> "AVTargetExtractor":
        model = DualPathAVModel.load(path)
        est = cls()
        est.set_params(**{k: v for k, v in model.config.to_dict().items() if k in est.get_params()})
        est.model_ = model
        return est
