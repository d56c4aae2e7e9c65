"""
Time-dependent deformation of a Gaussian scene.

Three networks act on each primitive:

- the deformation field maps (encoded position, encoded time, state) to
  offsets of position, rotation and log-scale; positions enter through
  stop_gradient, so the field never moves the canonical positions directly;
- the enhancement module reads (state, encoded time, position relative to the
  camera) through a shared trunk and two scalar heads: a position factor in
  (0, 1) that damps the offset, and an opacity factor in (-1, 1);
- the opacity decoder turns the 16 opacity logits of a primitive into its
  opacity.

`DeformableModel` wires them to a `GaussianScene` and produces the deformed
attributes for a view as graph nodes, ready for `renderer.render_op`.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from splat_autolabel import nn
from splat_autolabel.constants import (
    DEFORM_DEPTH,
    DEFORM_WIDTH,
    DEM_WIDTH,
    INITIAL_OPACITY,
    OEM_WIDTH,
    OPACITY_FACTOR_BIAS,
    OPACITY_LOGITS_DIM,
    POSITION_BANDS,
    POSITION_FACTOR_BIAS,
    STATE_DIM,
    TIME_BANDS,
)
from splat_autolabel.errors import CountMismatch, InvalidConfig
from splat_autolabel.geometry import positional_encoding
from splat_autolabel.nn import Mlp, MlpSpec, Parameter, Tensor
from splat_autolabel.scene import GaussianScene, SigmoidCodec, logit

# Newton iterations used to push decoded opacities under a ceiling
LIMIT_ITERATIONS = 50
LIMIT_MARGIN = 0.05


@dataclass(frozen=True)
class ModelConfig:
    position_bands: int = POSITION_BANDS
    time_bands: int = TIME_BANDS
    deform_width: int = DEFORM_WIDTH
    deform_depth: int = DEFORM_DEPTH
    dem_width: int = DEM_WIDTH
    dem_depth: int = 2
    oem_width: int = OEM_WIDTH
    state_dim: int = STATE_DIM
    opacity_logits_dim: int = OPACITY_LOGITS_DIM
    use_deform: bool = True
    use_dem: bool = True
    use_oem: bool = True

    def __post_init__(self) -> None:
        if self.position_bands < 1 or self.time_bands < 1:
            msg = "encoding bands must be at least 1"
            raise InvalidConfig(msg)
        if min(self.deform_width, self.deform_depth, self.dem_width, self.dem_depth, self.oem_width) < 1:
            msg = "network widths and depths must be positive"
            raise InvalidConfig(msg)


@dataclass
class DeformationOutput:
    delta_position: Tensor
    delta_rotation: Tensor
    delta_log_scale: Tensor


@dataclass
class AdjustmentFactors:
    position: Tensor
    opacity: Tensor


@dataclass
class DeformedGaussians:
    position: Tensor
    rotation: Tensor
    log_scale: Tensor
    opacity: Tensor
    color: Tensor
    rows: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)


def encode_time(t: float, n: int, bands: int) -> np.ndarray:
    return np.tile(positional_encoding(float(t), bands), (n, 1))


def encode_positions(positions: np.ndarray, bands: int) -> np.ndarray:
    return positional_encoding(np.asarray(positions, dtype=np.float64).reshape(-1, 3), bands)


class DeformationField:
    """
    (delta x, delta r, delta s) = F(gamma(sg(x)), gamma(t), d), final layer zeroed.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        n_in = 6 * cfg.position_bands + 2 * cfg.time_bands + cfg.state_dim
        self.mlp = Mlp(MlpSpec.uniform(n_in, cfg.deform_width, cfg.deform_depth, 10, zero_final=True), rng, "deform")

    def __call__(self, positions: Tensor, states: Tensor, t: float) -> DeformationOutput:
        return deform(self, positions, states, t)


def deform(field: DeformationField, positions: Tensor, states: Tensor, t: float) -> DeformationOutput:
    n = len(positions)
    if len(states) != n:
        msg = f"{n} positions but {len(states)} states"
        raise CountMismatch(msg)
    fixed = nn.stop_gradient(positions)
    features = nn.concat(
        [
            encode_positions(fixed.value, field.cfg.position_bands),
            encode_time(t, n, field.cfg.time_bands),
            states,
        ],
        axis=1,
    )
    out = field.mlp(features)
    return DeformationOutput(out[:, 0:3], out[:, 3:7], out[:, 7:10])


class DeformationEnhancement:
    """
    Shared trunk over (d, gamma(t), x - c) with a sigmoid position head and a
    tanh opacity head, both starting near one.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        n_in = cfg.state_dim + 2 * cfg.time_bands + 3
        width = cfg.dem_width
        self.trunk = Mlp(MlpSpec.uniform(n_in, width, cfg.dem_depth - 1, width, output="relu"), rng, "dem_trunk")
        self.position_head = Mlp(
            MlpSpec((width, 1), ("sigmoid",), POSITION_FACTOR_BIAS, zero_final=True), rng, "dem_position"
        )
        self.opacity_head = Mlp(MlpSpec((width, 1), ("tanh",), OPACITY_FACTOR_BIAS, zero_final=True), rng, "dem_opacity")

    def networks(self) -> Dict[str, Mlp]:
        return {"dem_trunk": self.trunk, "dem_position": self.position_head, "dem_opacity": self.opacity_head}


def dem_factors(
    dem: DeformationEnhancement, states: Tensor, t: float, positions: Tensor, camera_center: np.ndarray
) -> AdjustmentFactors:
    n = len(states)
    if len(positions) != n:
        msg = f"{n} states but {len(positions)} positions"
        raise CountMismatch(msg)
    features = nn.concat(
        [states, encode_time(t, n, dem.cfg.time_bands), positions - np.asarray(camera_center, dtype=np.float64)],
        axis=1,
    )
    hidden = dem.trunk(features)
    return AdjustmentFactors(dem.position_head(hidden), dem.opacity_head(hidden))


class OpacityDecoder:
    """
    sigma = sigmoid(F(sigma')) with F a 16 -> 64 -> 1 network whose output
    starts close to logit(0.1) for any input.

    With the decoder disabled, sigma = sigmoid(sigma'[0]).
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.enabled = cfg.use_oem
        self.mlp = Mlp(
            MlpSpec(
                (cfg.opacity_logits_dim, cfg.oem_width, 1),
                ("relu", "sigmoid"),
                final_bias=logit(INITIAL_OPACITY),
                final_scale=0.01,
            ),
            rng,
            "oem",
        )
        self._fallback = SigmoidCodec()

    def decode_op(self, logits: Tensor) -> Tensor:
        if not self.enabled:
            return nn.sigmoid(logits[:, 0])
        return self.mlp(logits)[:, 0]

    def decode(self, logits: np.ndarray) -> np.ndarray:
        logits = np.asarray(logits, dtype=np.float64)
        if not self.enabled:
            return self._fallback.decode(logits)
        if len(logits) == 0:
            return np.zeros(0)
        return self.mlp(logits).value[:, 0]

    def _pre_activation(self, logits: np.ndarray) -> np.ndarray:
        w1, b1 = self.mlp.weights[0].value, self.mlp.biases[0].value
        w2, b2 = self.mlp.weights[1].value, self.mlp.biases[1].value
        return (np.maximum(logits @ w1 + b1, 0.0) @ w2 + b2)[:, 0]

    def limit(self, logits: np.ndarray, ceiling: float) -> np.ndarray:
        """
        Move logits so the decoded opacity is at most ceiling.

        The pre-sigmoid output is piecewise linear in the logits, so Newton
        steps along its gradient land on the target within a linear region.
        Rows already under the ceiling are returned unchanged.
        """
        if not self.enabled:
            return self._fallback.limit(logits, ceiling)
        out = np.array(logits, dtype=np.float64)
        target = logit(ceiling) - LIMIT_MARGIN
        w1, b1 = self.mlp.weights[0].value, self.mlp.biases[0].value
        w2 = self.mlp.weights[1].value[:, 0]
        for _ in range(LIMIT_ITERATIONS):
            z = self._pre_activation(out)
            over = z > logit(ceiling)
            if not over.any():
                break
            active = (out[over] @ w1 + b1) > 0
            grad = (active * w2) @ w1.T
            norm2 = (grad * grad).sum(axis=1)
            step = np.where(norm2 > 0, (z[over] - target) / np.where(norm2 > 0, norm2, 1.0), 0.0)
            out[over] -= step[:, None] * grad
        return out

    def parameters(self) -> List[Parameter]:
        return self.mlp.parameters() if self.enabled else []


def assemble_g2(
    position: Tensor,
    rotation: Tensor,
    log_scale: Tensor,
    opacity: Tensor,
    color: Tensor,
    deformation: Optional[DeformationOutput],
    factors: Optional[AdjustmentFactors],
    rows: Optional[np.ndarray] = None,
) -> DeformedGaussians:
    """
    G2 = (x + a_p dx, normalize(r + dr), s + ds, clamp(a_s sigma, 0, 1), c).

    Missing deformation means zero offsets; missing factors mean a_p = a_s = 1.
    """
    n = len(position)
    parts = [rotation, log_scale, opacity, color]
    if deformation is not None:
        parts += [deformation.delta_position, deformation.delta_rotation, deformation.delta_log_scale]
    if factors is not None:
        parts += [factors.position, factors.opacity]
    for part in parts:
        if len(part) != n:
            msg = f"{n} primitives but an attribute has {len(part)} rows"
            raise CountMismatch(msg)
    opacity = nn.reshape(opacity, (n,))
    if deformation is not None:
        offset = deformation.delta_position
        if factors is not None:
            offset = offset * factors.position
        position = position + offset
        rotation = rotation + deformation.delta_rotation
        log_scale = log_scale + deformation.delta_log_scale
    if factors is not None:
        opacity = opacity * nn.reshape(factors.opacity, (n,))
    norm = nn.sqrt(nn.sum(nn.square(rotation), axis=1, keepdims=True))
    rotation = rotation / norm
    opacity = nn.clip(opacity, 0.0, 1.0)
    return DeformedGaussians(position, rotation, log_scale, opacity, color, np.arange(n) if rows is None else rows)


class DeformableModel:
    """
    A scene together with its deformation networks.

    `deformed(view, rows, warm)` returns G2 for the selected primitives at the
    view's time; during warm-up the field and the enhancement module are
    bypassed and receive no gradient, while the opacity decoder stays in use.
    """

    def __init__(self, scene: GaussianScene, cfg: ModelConfig, rng: np.random.Generator) -> None:
        if scene.state.shape[1] != cfg.state_dim or scene.opacity_logits.shape[1] != cfg.opacity_logits_dim:
            msg = (
                f"scene has state/opacity widths {scene.state.shape[1]}/{scene.opacity_logits.shape[1]}, "
                f"model expects {cfg.state_dim}/{cfg.opacity_logits_dim}"
            )
            raise CountMismatch(msg)
        self.scene = scene
        self.cfg = cfg
        self.field = DeformationField(cfg, rng)
        self.dem = DeformationEnhancement(cfg, rng)
        self.decoder = OpacityDecoder(cfg, rng)

    def networks(self) -> Dict[str, Mlp]:
        out: Dict[str, Mlp] = {}
        if self.cfg.use_deform:
            out["deform"] = self.field.mlp
            if self.cfg.use_dem:
                out.update(self.dem.networks())
        if self.cfg.use_oem:
            out["oem"] = self.decoder.mlp
        return out

    def load_networks(self, networks: Dict[str, Mlp]) -> None:
        if "deform" in networks:
            self.field.mlp = networks["deform"]
        if "dem_trunk" in networks:
            self.dem.trunk = networks["dem_trunk"]
            self.dem.position_head = networks["dem_position"]
            self.dem.opacity_head = networks["dem_opacity"]
        if "oem" in networks:
            self.decoder.mlp = networks["oem"]

    def network_parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for mlp in self.networks().values():
            params.extend(mlp.parameters())
        return params

    def decoded_opacity(self) -> np.ndarray:
        return self.decoder.decode(self.scene.opacity_logits.value)

    def deformed(self, t: float, camera_center: np.ndarray, rows: np.ndarray, *, warm: bool = False) -> DeformedGaussians:
        scene = self.scene
        rows = np.asarray(rows, dtype=np.int64)
        position = nn.leaf(scene.position)[rows]
        rotation = nn.leaf(scene.rotation)[rows]
        log_scale = nn.leaf(scene.log_scale)[rows]
        color = nn.leaf(scene.color)[rows]
        opacity = self.decoder.decode_op(nn.leaf(scene.opacity_logits)[rows])
        deformation = None
        factors = None
        if self.cfg.use_deform and not warm:
            state = nn.leaf(scene.state)[rows]
            deformation = deform(self.field, position, state, t)
            if self.cfg.use_dem:
                factors = dem_factors(self.dem, state, t, position, camera_center)
        return assemble_g2(position, rotation, log_scale, opacity, color, deformation, factors, rows)

    def snapshot(self, t: float, camera_center: np.ndarray, rows: Optional[np.ndarray] = None) -> DeformedGaussians:
        """
        The deformed attributes after warm-up, for rendering outside training.
        """
        if rows is None:
            rows = np.arange(len(self.scene))
        return self.deformed(t, camera_center, rows)
