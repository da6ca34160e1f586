"""scikit-learn style wrapper around training and restoration."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import checkpoint as ckpt_io
from .config import RunConfig, load_config
from .data import SampleSource
from .inference import Restorer
from .training import train


class BlindDecomposer(BaseEstimator):
    """Controllable blind decomposition as an estimator.

    ``fit`` trains on the dataset described by the run config (regenerated
    in memory unless ``data_dir`` is set). ``predict`` restores images under
    a prompt, ``predict_proba`` returns presence probabilities and
    ``transform`` returns every single-component reconstruction.

    ``config`` is a ``RunConfig``, a YAML path or a bundled profile name.
    ``epochs`` and ``random_state`` override the config when not None.
    """

    def __init__(self, config="desk", epochs=None, random_state=None, data_dir=None):
        self.config = config
        self.epochs = epochs
        self.random_state = random_state
        self.data_dir = data_dir

    def _run_config(self):
        cfg = self.config if isinstance(self.config, RunConfig) else load_config(self.config)
        if self.epochs is not None:
            cfg.optimizer.epochs = int(self.epochs)
        if self.random_state is not None:
            cfg.optimizer.seed = int(self.random_state)
        return cfg

    def fit(self, X=None, y=None):
        """Train; ``X`` and ``y`` are ignored because samples carry their own truths."""
        cfg = self._run_config()
        source = SampleSource(cfg, self.data_dir, on_the_fly=self.data_dir is None)
        result = train(cfg, source)
        self.run_config_ = cfg
        self.model_ = result.model
        self.history_ = result.history
        self.restorer_ = Restorer(self.model_)
        self.components_ = tuple(cfg.components)
        return self

    @classmethod
    def from_checkpoint(cls, path):
        state = ckpt_io.load(path)
        est = cls(config=None)
        est.model_ = state.build_model().eval()
        est.restorer_ = Restorer(est.model_)
        est.components_ = tuple(est.model_.cfg.components)
        return est

    def predict(self, X, prompts=""):
        """Restore each HxWx3 image in ``X``; ``prompts`` is one string or one per image."""
        check_is_fitted(self, "model_")
        prompts = [prompts] * len(X) if isinstance(prompts, str) else list(prompts)
        if len(prompts) != len(X):
            raise ValueError(f"{len(prompts)} prompts for {len(X)} images")
        return np.stack([self.restorer_.restore(img, p).output for img, p in zip(X, prompts)])

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return np.stack([self.restorer_.classify(img)[0] for img in X])

    def transform(self, X):
        """(n_images, N, H, W, 3) one-hot reconstructions."""
        check_is_fitted(self, "model_")
        return np.stack([self.restorer_.reconstruct_components(img) for img in X])

    def save(self, path):
        check_is_fitted(self, "model_")
        return ckpt_io.save(path, ckpt_io.from_model(self.model_))
