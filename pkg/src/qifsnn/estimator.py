"""scikit-learn compatible spiking classifier."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .energy import EnergyConstants, estimate_energy, merge_rates
from .network import ARCHITECTURES, LayerSpec, NetworkSpec, SpikingNetwork, network_forward
from .neuron import LifParams, QifParams
from .training import TrainConfig, predict_logits, softmax, substream, train


class SpikingClassifier(ClassifierMixin, BaseEstimator):
    """Multi-timestep spiking network trained with STBP.

    Inputs are direct-encoded (the same sample is injected at every
    timestep). Flat inputs of shape ``(n_samples, n_features)`` suit the
    ``tiny_dense`` architecture; image inputs ``(n_samples, C, H, W)`` suit
    ``tiny_conv`` and ``tiny_res``.

    Parameters
    ----------
    architecture : {"tiny_dense", "tiny_conv", "tiny_res"}
    neuron : {"qif", "lif"}
    surrogate : {"auto", "window", "rectangle"}
        ``auto`` picks the analytical window for QIF and the rectangle for LIF.
    alpha : float
        Rectangle surrogate width.
    qif_params, lif_params : QifParams, LifParams or None
        ``None`` uses the defaults.
    random_state : int
        Master seed; initialisation, shuffling and dropout use separate substreams.
    network_spec : NetworkSpec or None
        Overrides ``architecture``/``hidden``/``channels`` with an explicit description.

    Attributes
    ----------
    classes_ : ndarray
    network_ : SpikingNetwork
    history_ : list of dict
        One row per epoch: epoch, loss, train_acc, test_acc, seconds.
    """

    def __init__(self, architecture="tiny_dense", neuron="qif", surrogate="auto", alpha=1.0,
                 timesteps=2, hidden=32, channels=(8, 16), qif_params=None, lif_params=None,
                 optimizer="sgd", learning_rate=0.1, momentum=0.9, weight_decay=1e-4, epochs=50,
                 batch_size=32, scheduler="cosine", dropout=0.0, grad_clip=None, random_state=0,
                 network_spec=None, verbose=False):
        self.architecture = architecture
        self.neuron = neuron
        self.surrogate = surrogate
        self.alpha = alpha
        self.timesteps = timesteps
        self.hidden = hidden
        self.channels = channels
        self.qif_params = qif_params
        self.lif_params = lif_params
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.scheduler = scheduler
        self.dropout = dropout
        self.grad_clip = grad_clip
        self.random_state = random_state
        self.network_spec = network_spec
        self.verbose = verbose

    def _surrogate_kind(self):
        if self.surrogate == "auto":
            return "window" if self.neuron == "qif" else "rectangle"
        return self.surrogate

    def _build_spec(self, input_shape, n_classes) -> NetworkSpec:
        if self.network_spec is not None:
            spec = self.network_spec
            if spec.input_shape != tuple(input_shape) or spec.n_classes != n_classes:
                raise ValueError(
                    f"network_spec expects input {spec.input_shape} and {spec.n_classes} classes, "
                    f"data has {tuple(input_shape)} and {n_classes}"
                )
            return spec
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; choose from {sorted(ARCHITECTURES)}")
        common = dict(
            timesteps=self.timesteps,
            neuron=self.neuron,
            surrogate=self._surrogate_kind(),
            alpha=self.alpha,
            qif=self.qif_params or QifParams(),
            lif=self.lif_params or LifParams(),
        )
        if self.architecture == "tiny_dense":
            if len(input_shape) != 1:
                raise ValueError(f"tiny_dense needs flat inputs, got sample shape {input_shape}")
            spec = ARCHITECTURES["tiny_dense"](input_shape[0], n_classes, hidden=self.hidden, **common)
        elif self.architecture == "tiny_conv":
            spec = ARCHITECTURES["tiny_conv"](input_shape, n_classes, channels=tuple(self.channels),
                                              hidden=self.hidden, **common)
        else:
            spec = ARCHITECTURES["tiny_res"](input_shape, n_classes, channels=int(np.atleast_1d(self.channels)[0]),
                                             hidden=self.hidden, **common)
        if self.dropout:
            spec.layers.append(LayerSpec("dropout", {"p": float(self.dropout)}))
        return spec

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, epochs=self.epochs, batch_size=self.batch_size,
            timesteps=self.timesteps, seed=self.random_state, scheduler=self.scheduler,
            surrogate=self._surrogate_kind(), alpha=self.alpha, grad_clip=self.grad_clip,
        )

    def _validate_X(self, X, reset=False):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if reset:
            self.n_features_in_ = int(np.prod(X.shape[1:]))
            self.input_shape_ = tuple(X.shape[1:])
        elif tuple(X.shape[1:]) != self.input_shape_:
            raise ValueError(f"X has sample shape {X.shape[1:]}, estimator was fitted on {self.input_shape_}")
        return X

    def fit(self, X, y, eval_set=None):
        """Train from scratch. ``eval_set=(X_test, y_test)`` fills the ``test_acc`` log column."""
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        check_classification_targets(y)
        self._validate_X(X, reset=True)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.spec_ = self._build_spec(self.input_shape_, len(self.classes_))
        self.network_ = SpikingNetwork(self.spec_, substream(self.random_state, "init"))
        x_test = y_test = None
        if eval_set is not None:
            x_test = self._validate_X(eval_set[0])
            y_test = np.searchsorted(self.classes_, np.asarray(eval_set[1]))
        callback = (lambda row: print(row)) if self.verbose else None
        self.history_ = train(self.network_, X, y_idx, self._train_config(), x_test, y_test, callback)
        return self

    def decision_function(self, X):
        """Time-averaged readout ``(1/T) sum_t W o(t)`` per class."""
        check_is_fitted(self, "network_")
        return predict_logits(self.network_, self._validate_X(X))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def firing_rates(self, X, batch_size=256) -> dict[str, float]:
        """Per spiking layer firing rates in eval mode."""
        check_is_fitted(self, "network_")
        X = self._validate_X(X)
        records = [network_forward(self.network_, X[i : i + batch_size]) for i in range(0, len(X), batch_size)]
        return merge_rates(records)

    def energy_report(self, X, constants: EnergyConstants = EnergyConstants(), architecture=None, dataset=""):
        check_is_fitted(self, "network_")
        return estimate_energy(self.network_, self.firing_rates(X), constants,
                               architecture or self.architecture, dataset)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = False
        return tags
