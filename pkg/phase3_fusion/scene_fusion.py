"""
Phase 3: Scene-Level Fusion
Scene information lives in the parameters {gamma, beta, W, b} of a residual
normalized-affine map f_s. Each frame takes one closed-form descent step on
a self-supervised reconstruction loss and the updated parameters are applied
to the fused volume.

    Z    = W X + b 1ᵀ
    Ẑ    = zscore(Z)                    (per column over channels)
    f_s  = gamma ⊙ Ẑ + beta + X
    L_s  = ‖f_s(Q1 V) - Q2 V‖²
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from phase2_tensors import DEFAULT_EPS, ShapeError, matmul, zscore_norm
from phase2_tensors.schemas import as_float_array


logger = logging.getLogger(__name__)


class SceneParams(BaseModel):
    """Scene-adaptive parameters S = {gamma, beta, W, b}; also the state H_s."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    gamma: np.ndarray = Field(..., description="Scale, c-vector")
    beta: np.ndarray = Field(..., description="Shift, c-vector")
    W: np.ndarray = Field(..., description="Channel mix, c x c")
    b: np.ndarray = Field(..., description="Bias, c-vector")

    @field_validator('gamma', 'beta', 'b', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_float_array(v).reshape(-1)

    @field_validator('W', mode='before')
    @classmethod
    def coerce_matrix(cls, v):
        return as_float_array(v)

    @model_validator(mode='after')
    def consistent(self):
        c = self.gamma.shape[0]
        if self.beta.shape != (c,) or self.b.shape != (c,) or self.W.shape != (c, c):
            raise ShapeError(
                f"scene params disagree: gamma {self.gamma.shape}, beta {self.beta.shape}, "
                f"W {self.W.shape}, b {self.b.shape}"
            )
        for name in ('gamma', 'beta', 'W', 'b'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"scene parameter {name} is not finite")
        return self

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity_start(cls, channels: int) -> "SceneParams":
        """S⁰: gamma = 1, beta = 0, W = I, b = 0."""
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            W=np.eye(channels),
            b=np.zeros(channels),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {'gamma': self.gamma, 'beta': self.beta, 'W': self.W, 'b': self.b}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "SceneParams":
        return cls(**{name: tensors[name] for name in ('gamma', 'beta', 'W', 'b')})


class SceneGradient(BaseModel):
    """Gradient of L_s with respect to each SceneParams block."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    d_gamma: np.ndarray
    d_beta: np.ndarray
    d_W: np.ndarray
    d_b: np.ndarray

    def linear_only(self) -> "SceneGradient":
        """Drop the gamma/beta blocks so only W and b carry history."""
        return self.model_copy(update={
            'd_gamma': np.zeros_like(self.d_gamma),
            'd_beta': np.zeros_like(self.d_beta),
        })

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(g)) for g in (self.d_gamma, self.d_beta, self.d_W, self.d_b)))


class AugmentWeights(BaseModel):
    """Augmentations Q1, Q2 of the self-supervised task and the output map Qo."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    Q1: np.ndarray
    Q2: np.ndarray
    Qo: np.ndarray

    @field_validator('Q1', 'Q2', 'Qo', mode='before')
    @classmethod
    def square_finite(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"augmentation matrices must be square, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("augmentation matrix is not finite")
        return arr

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator) -> "AugmentWeights":
        """Uniform(-a, a) entries with a = 1/sqrt(c)."""
        a = 1.0 / np.sqrt(channels)
        return cls(
            Q1=rng.uniform(-a, a, size=(channels, channels)),
            Q2=rng.uniform(-a, a, size=(channels, channels)),
            Qo=rng.uniform(-a, a, size=(channels, channels)),
        )

    @classmethod
    def identity(cls, channels: int) -> "AugmentWeights":
        eye = np.eye(channels)
        return cls(Q1=eye, Q2=eye.copy(), Qo=eye.copy())


class SceneIntermediates(BaseModel):
    """Forward statistics and the backward chain terms Δ1, Δ2, Δ3."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    zhat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    delta1: Optional[np.ndarray] = None
    delta2: Optional[np.ndarray] = None
    delta3: Optional[np.ndarray] = None


def _check_dims(x: np.ndarray, params: SceneParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != params.channels:
        raise ShapeError(f"expected a ({params.channels}, n) matrix, got {x.shape}")
    return x


def scene_forward(
    x: np.ndarray,
    params: SceneParams,
    eps: float = DEFAULT_EPS,
) -> tuple[np.ndarray, SceneIntermediates]:
    """
    Evaluate f_s(x; S) = gamma ⊙ zscore(W x + b) + beta + x.

    Args:
        x: (c, n) input features
        params: scene parameters
        eps: Z-score variance regularizer

    Returns:
        (y, intermediates) where y has the dims of x
    """
    x = _check_dims(x, params)
    z = matmul(params.W, x) + params.b[:, None]
    zhat, mu, sigma = zscore_norm(z, eps)
    y = params.gamma[:, None] * zhat + params.beta[:, None] + x
    return y, SceneIntermediates(zhat=zhat, mu=mu, sigma=sigma)


def _delta1(v: np.ndarray, params: SceneParams, aug: AugmentWeights, eps: float):
    v = _check_dims(v, params)
    if aug.Q1.shape[0] != params.channels:
        raise ShapeError(f"augmentations are {aug.Q1.shape}, params have c={params.channels}")
    x1 = matmul(aug.Q1, v)
    y, inter = scene_forward(x1, params, eps)
    return y - matmul(aug.Q2, v), x1, inter


def scene_loss(v: np.ndarray, params: SceneParams, aug: AugmentWeights, eps: float = DEFAULT_EPS) -> float:
    """Unnormalized squared Frobenius norm ‖f_s(Q1 v) - Q2 v‖²."""
    delta1, _, _ = _delta1(v, params, aug, eps)
    return float(np.sum(delta1 * delta1))


def scene_gradient(
    v: np.ndarray,
    params: SceneParams,
    aug: AugmentWeights,
    eps: float = DEFAULT_EPS,
) -> tuple[SceneGradient, SceneIntermediates]:
    """
    Closed-form gradient of L_s through the full normalization chain.

        Δ1 = f_s(Q1 V) - Q2 V
        Δ2 = 2 gamma ⊙ Δ1
        Δ3 = (Δ2 - (1/c) 11ᵀΔ2 - (1/c) Ẑ ⊙ (11ᵀ(Ẑ ⊙ Δ2))) ⊘ σ
        ∇gamma = 2 (Δ1 ⊙ Ẑ) 1,  ∇beta = 2 Δ1 1
        ∇W = Δ3 (Q1 V)ᵀ,        ∇b = Δ3 1

    Returns:
        (gradient, intermediates with every Δ filled)
    """
    delta1, x1, inter = _delta1(v, params, aug, eps)
    c = params.channels
    zhat = inter.zhat

    delta2 = 2.0 * params.gamma[:, None] * delta1
    col_sum = delta2.sum(axis=0, keepdims=True)
    proj_sum = (zhat * delta2).sum(axis=0, keepdims=True)
    delta3 = (delta2 - col_sum / c - zhat * proj_sum / c) / inter.sigma

    grad = SceneGradient(
        d_gamma=2.0 * (delta1 * zhat).sum(axis=1),
        d_beta=2.0 * delta1.sum(axis=1),
        d_W=matmul(delta3, x1.T),
        d_b=delta3.sum(axis=1),
    )
    inter = inter.model_copy(update={'delta1': delta1, 'delta2': delta2, 'delta3': delta3})
    return grad, inter


def scene_update(h_prev: SceneParams, grad: SceneGradient, eta_s: float) -> SceneParams:
    """H_s = H_s_prev - eta_s * grad, block by block."""
    if eta_s < 0:
        raise ValueError(f"eta_s must be non-negative, got {eta_s}")
    return SceneParams(
        gamma=h_prev.gamma - eta_s * grad.d_gamma,
        beta=h_prev.beta - eta_s * grad.d_beta,
        W=h_prev.W - eta_s * grad.d_W,
        b=h_prev.b - eta_s * grad.d_b,
    )


def scene_apply(
    v_fused: np.ndarray,
    s_fused: SceneParams,
    aug: AugmentWeights,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """V̂ = f_s(Qo V_f; S_f)."""
    v_fused = _check_dims(v_fused, s_fused)
    y, _ = scene_forward(matmul(aug.Qo, v_fused), s_fused, eps)
    return y


class SceneFusion:
    """
    Per-sequence driver for the scene stage: gradient, update, apply.

    Holds the static configuration (augmentations, step size, variant);
    the parameter state itself is threaded through `step` by the caller.
    """

    def __init__(
        self,
        aug: AugmentWeights,
        eta: float,
        eps: float = DEFAULT_EPS,
        update_norm_params: bool = True,
    ):
        self.aug = aug
        self.eta = eta
        self.eps = eps
        self.update_norm_params = update_norm_params

    def step(self, h_prev: SceneParams, v_now: np.ndarray, v_fused: np.ndarray) -> tuple[np.ndarray, SceneParams]:
        """
        One frame of scene fusion.

        Args:
            h_prev: H_s from the previous frame (S⁰ at the first frame)
            v_now: (c, n) current lifted features, the self-supervision target
            v_fused: (c, n) voxel-fused features to transform

        Returns:
            (V̂, H_s)
        """
        grad, _ = scene_gradient(v_now, h_prev, self.aug, self.eps)
        if not self.update_norm_params:
            grad = grad.linear_only()
        h_s = scene_update(h_prev, grad, self.eta)
        logger.debug("scene step: eta=%.3e max|grad|=%.3e", self.eta, grad.max_abs())
        return scene_apply(v_fused, h_s, self.aug, self.eps), h_s
