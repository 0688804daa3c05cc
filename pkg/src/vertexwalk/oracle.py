"""Piecewise-affine view of the first-layer L1 loss.

With every layer above the first frozen, the L1 training loss as a function
of the first layer's parameters p = vec(W_1 | b_1) in R^D, D = n_1(n_0+1),
is piecewise affine. The kink surfaces come from two families, one per
training sample i:

  * neuron surfaces   z^{(l)}_{i,k}(p) = 0   (hidden pre-activation zero)
  * residual surfaces r_{i,j}(p) = 0         (target minus output zero)

Inside a region where no surface is crossed, every hidden unit has a fixed
on/off state and every residual a fixed sign, so the loss is affine. This
module evaluates the loss, identifies regions by their tri-state signature,
and produces the region-local affine data (loss gradient, constraint
normals, directional crossing times) that the vertex-walking solver needs.

The loss could equivalently be rewritten as one large ReLU network over p;
we keep it implicit instead so that each kink surface retains its identity
as a (sample, unit) or (sample, output) pair.

Point layout: p.reshape(n_1, n_0+1) puts row k of W_1 in columns 0..n_0-1
and b_1[k] in the last column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AmbiguousSignature, InvalidTag, NoCrossing, ShapeMismatch
from .network import Architecture, LayerParams, NetworkParams, TrainingSet, relu

NEURON = 0
RESIDUAL = 1


@dataclass(frozen=True, order=True)
class ConstraintTag:
    """Identity of one kink surface, totally ordered by (kind, sample, layer, unit).

    Neuron tags carry the hidden layer (1-based) and unit index; residual
    tags use layer = L+1 and the output coordinate as unit.
    """

    kind: int
    sample: int
    layer: int
    unit: int

    def __repr__(self):
        name = "neuron" if self.kind == NEURON else "residual"
        return f"{name}(i={self.sample}, l={self.layer}, k={self.unit})"


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances: activity threshold and probe step scale."""

    act: float = 1e-8
    probe: float = 1e-7


@dataclass(frozen=True)
class Signature:
    """Tri-state activation pattern: -1/0/+1 per hidden unit and residual.

    `neurons[l-1]` holds the states of hidden layer l as an int8 array of
    shape (N, n_l); `residuals` holds the residual signs (N, n_out). A
    signature with no zero entries identifies a full-dimensional region.
    """

    neurons: tuple[np.ndarray, ...]
    residuals: np.ndarray

    @property
    def has_zeros(self) -> bool:
        return any(np.any(a == 0) for a in self.neurons) or bool(
            np.any(self.residuals == 0)
        )

    def state_of(self, tag: ConstraintTag) -> int:
        if tag.kind == NEURON:
            return int(self.neurons[tag.layer - 1][tag.sample, tag.unit])
        return int(self.residuals[tag.sample, tag.unit])

    def with_state(self, tag: ConstraintTag, state: int) -> "Signature":
        """Copy with one entry replaced; unmodified arrays are shared."""
        if tag.kind == NEURON:
            neurons = list(self.neurons)
            arr = neurons[tag.layer - 1].copy()
            arr[tag.sample, tag.unit] = state
            neurons[tag.layer - 1] = arr
            return Signature(tuple(neurons), self.residuals)
        res = self.residuals.copy()
        res[tag.sample, tag.unit] = state
        return Signature(self.neurons, res)

    def equals(self, other: "Signature") -> bool:
        if len(self.neurons) != len(other.neurons):
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self.neurons, other.neurons)
        ) and np.array_equal(self.residuals, other.residuals)


@dataclass(frozen=True)
class AffinePiece:
    """Loss restricted to one region: value(p) = gradient . p + intercept."""

    gradient: np.ndarray
    intercept: float
    signature: Signature


@dataclass(frozen=True)
class ConstraintValues:
    """All constraint values at one point: pre-activations and residuals."""

    preacts: tuple[np.ndarray, ...]
    residuals: np.ndarray
    outputs: np.ndarray
    loss: float


@dataclass(frozen=True)
class OracleInstance:
    """Immutable problem instance: architecture, frozen upper layers, data.

    Nothing point-dependent is cached; every query recomputes from p.
    """

    arch: Architecture
    fixed: tuple[LayerParams, ...]
    data: TrainingSet
    tol: Tolerances = field(default_factory=Tolerances)
    x_aug: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        widths = self.arch.widths
        depth = self.arch.hidden_depth
        if len(self.fixed) != depth:
            raise ShapeMismatch(
                f"expected {depth} fixed layers (2..L+1), got {len(self.fixed)}"
            )
        prev = widths[1]
        for l, layer in enumerate(self.fixed, start=2):
            if layer.fan_in != prev or layer.fan_out != widths[l]:
                raise ShapeMismatch(f"fixed layer {l} has shape {layer.weight.shape}")
            prev = layer.fan_out
        if self.data.inputs.shape[1] != widths[0]:
            raise ShapeMismatch("data input dim does not match architecture")
        if self.data.targets.shape[1] != widths[-1]:
            raise ShapeMismatch("data target dim does not match architecture")
        n = self.data.size
        x_aug = np.empty((n, widths[0] + 1))
        x_aug[:, :-1] = self.data.inputs
        x_aug[:, -1] = 1.0
        object.__setattr__(self, "x_aug", x_aug)

    @property
    def dim(self) -> int:
        return self.arch.widths[1] * (self.arch.widths[0] + 1)

    @property
    def n_samples(self) -> int:
        return self.data.size

    @property
    def hidden_total(self) -> int:
        return sum(self.arch.hidden_widths)

    @property
    def n_constraints(self) -> int:
        return self.n_samples * (self.hidden_total + self.arch.output_dim)

    def layer_offset(self, layer: int) -> int:
        return sum(self.arch.hidden_widths[: layer - 1])


def make_oracle(
    arch: Architecture,
    fixed: tuple[LayerParams, ...] | list[LayerParams],
    data: TrainingSet,
    tol: Tolerances | None = None,
) -> OracleInstance:
    return OracleInstance(
        arch=arch, fixed=tuple(fixed), data=data, tol=tol or Tolerances()
    )


def decode_point(o: OracleInstance, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split p into (W_1, b_1)."""
    p = _check_point(o, p)
    mat = p.reshape(o.arch.widths[1], o.arch.widths[0] + 1)
    return mat[:, :-1].copy(), mat[:, -1].copy()


def encode_params(o: OracleInstance, w1: np.ndarray, b1: np.ndarray) -> np.ndarray:
    mat = np.column_stack([np.asarray(w1, dtype=float), np.asarray(b1, dtype=float)])
    if mat.shape != (o.arch.widths[1], o.arch.widths[0] + 1):
        raise ShapeMismatch("first-layer shapes do not match architecture")
    return mat.ravel()


def network_params(o: OracleInstance, p: np.ndarray) -> NetworkParams:
    """Assemble full NetworkParams with the first layer decoded from p."""
    w1, b1 = decode_point(o, p)
    return NetworkParams((LayerParams(w1, b1),) + o.fixed)


def _check_point(o: OracleInstance, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (o.dim,):
        raise ShapeMismatch(f"point has shape {p.shape}, expected ({o.dim},)")
    return p


def forward_values(o: OracleInstance, p: np.ndarray) -> ConstraintValues:
    """Every constraint value at p from one batched forward pass."""
    p = _check_point(o, p)
    pmat = p.reshape(o.arch.widths[1], o.arch.widths[0] + 1)
    z = o.x_aug @ pmat.T
    preacts = [z]
    h = relu(z)
    for layer in o.fixed[:-1]:
        z = h @ layer.weight.T + layer.bias
        preacts.append(z)
        h = relu(z)
    out = o.fixed[-1]
    outputs = h @ out.weight.T + out.bias
    residuals = o.data.targets - outputs
    return ConstraintValues(
        preacts=tuple(preacts),
        residuals=residuals,
        outputs=outputs,
        loss=float(np.sum(np.abs(residuals))),
    )


def value(o: OracleInstance, p: np.ndarray) -> float:
    """Layer-wise L1 loss at p."""
    return forward_values(o, p).loss


def _states(arr: np.ndarray, act_tol: float) -> np.ndarray:
    s = np.sign(arr).astype(np.int8)
    s[np.abs(arr) <= act_tol] = 0
    return s


def signature_from_values(o: OracleInstance, vals: ConstraintValues) -> Signature:
    act = o.tol.act
    return Signature(
        neurons=tuple(_states(z, act) for z in vals.preacts),
        residuals=_states(vals.residuals, act),
    )


def region_signature(o: OracleInstance, p: np.ndarray) -> Signature:
    return signature_from_values(o, forward_values(o, p))


def resolve_signature(
    o: OracleInstance, vals: ConstraintValues, fallback: Signature
) -> Signature:
    """Signature at a point with zero states taken from a fallback region.

    Used on points sitting on active surfaces: the fallback supplies a side
    for each surface the point lies on, yielding a full-dimensional region
    whose closure contains the point.
    """
    sig = signature_from_values(o, vals)
    neurons = []
    for s, f in zip(sig.neurons, fallback.neurons):
        merged = np.where(s == 0, f, s)
        neurons.append(merged)
    residuals = np.where(sig.residuals == 0, fallback.residuals, sig.residuals)
    return Signature(tuple(neurons), residuals)


# --- region-local affine data ------------------------------------------------

# Low-level helpers work on plain mask/sign arrays so the solver can reuse
# buffers across many nearby queries. masks[l-1] is float (N, n_l) with 1.0
# where the unit is on; sigma is float (N, n_out) holding residual signs.


def region_masks(sig: Signature) -> list[np.ndarray]:
    return [(a > 0).astype(float) for a in sig.neurons]


def region_sigma(sig: Signature) -> np.ndarray:
    return sig.residuals.astype(float)


def _backcumulate(o: OracleInstance, masks: list[np.ndarray]) -> np.ndarray:
    """Per-sample sensitivity of outputs to first-layer pre-activations.

    Returns B of shape (N, n_out, n_1) with B[i, j] = W*_{L+1}[j] D^L_i W*_L
    ... D^2_i W*_2, the row vector u_{i,j}.
    """
    n = o.n_samples
    b = np.broadcast_to(o.fixed[-1].weight, (n,) + o.fixed[-1].weight.shape)
    for l in range(len(o.fixed) - 1, 0, -1):
        b = (b * masks[l][:, None, :]) @ o.fixed[l - 1].weight
    return b


def region_gradient(
    o: OracleInstance, masks: list[np.ndarray], sigma: np.ndarray
) -> np.ndarray:
    """Loss gradient on the region: sum_{i,j} (-sigma_ij) d f_ij / dp."""
    b = _backcumulate(o, masks)
    w = -np.einsum("ij,ijk->ik", sigma, b)
    return ((w * masks[0]).T @ o.x_aug).ravel()


def sample_gradient_rows(
    o: OracleInstance, rows: list[np.ndarray], sigma_row: np.ndarray, i: int
) -> np.ndarray:
    """One sample's gradient contribution from its own mask rows and signs."""
    u = o.fixed[-1].weight
    for l in range(len(o.fixed) - 1, 0, -1):
        u = (u * rows[l][None, :]) @ o.fixed[l - 1].weight
    w = -(sigma_row @ u)
    return ((w * rows[0])[:, None] * o.x_aug[i][None, :]).ravel()


def region_gradient_sample(
    o: OracleInstance, masks: list[np.ndarray], sigma: np.ndarray, i: int
) -> np.ndarray:
    """Single sample's contribution to the region gradient."""
    return sample_gradient_rows(o, [m[i] for m in masks], sigma[i], i)


def _masked_outputs(o: OracleInstance, masks: list[np.ndarray], p: np.ndarray) -> np.ndarray:
    """Outputs of the affine surrogate with frozen unit states."""
    pmat = p.reshape(o.arch.widths[1], o.arch.widths[0] + 1)
    h = (o.x_aug @ pmat.T) * masks[0]
    for l, layer in enumerate(o.fixed[:-1], start=2):
        h = (h @ layer.weight.T + layer.bias) * masks[l - 1]
    out = o.fixed[-1]
    return h @ out.weight.T + out.bias


def masked_value(o: OracleInstance, sig: Signature, p: np.ndarray) -> float:
    """Affine surrogate of the loss for a fixed signature, exact on the region."""
    p = _check_point(o, p)
    f = _masked_outputs(o, region_masks(sig), p)
    return float(np.sum(region_sigma(sig) * (o.data.targets - f)))


def affine_piece(o: OracleInstance, sig: Signature) -> AffinePiece:
    """Gradient and intercept of the loss on a full-dimensional region."""
    if sig.has_zeros:
        raise AmbiguousSignature("signature has zero states; resolve sides first")
    masks = region_masks(sig)
    sigma = region_sigma(sig)
    g = region_gradient(o, masks, sigma)
    f0 = _masked_outputs(o, masks, np.zeros(o.dim))
    intercept = float(np.sum(sigma * (o.data.targets - f0)))
    return AffinePiece(gradient=g, intercept=intercept, signature=sig)


def constraint_normal(
    o: OracleInstance, masks: list[np.ndarray], tag: ConstraintTag
) -> np.ndarray:
    """Region-local gradient of one constraint function."""
    _check_tag(o, tag)
    n1 = o.arch.widths[1]
    xrow = o.x_aug[tag.sample]
    if tag.kind == NEURON:
        if tag.layer == 1:
            grad = np.zeros((n1, xrow.shape[0]))
            grad[tag.unit] = xrow
            return grad.ravel()
        v = o.fixed[tag.layer - 2].weight[tag.unit]
        for m in range(tag.layer - 1, 1, -1):
            v = (v * masks[m - 1][tag.sample]) @ o.fixed[m - 2].weight
        return ((v * masks[0][tag.sample])[:, None] * xrow[None, :]).ravel()
    u = o.fixed[-1].weight[tag.unit]
    for m in range(len(o.fixed) - 1, 0, -1):
        u = (u * masks[m][tag.sample]) @ o.fixed[m - 1].weight
    return -((u * masks[0][tag.sample])[:, None] * xrow[None, :]).ravel()


def constraint_eval(
    o: OracleInstance, p: np.ndarray, sig: Signature, tag: ConstraintTag
) -> tuple[float, np.ndarray]:
    """Value and region-local gradient of one constraint at p."""
    vals = forward_values(o, p)
    _check_tag(o, tag)
    if tag.kind == NEURON:
        v = float(vals.preacts[tag.layer - 1][tag.sample, tag.unit])
    else:
        v = float(vals.residuals[tag.sample, tag.unit])
    return v, constraint_normal(o, region_masks(sig), tag)


def _check_tag(o: OracleInstance, tag: ConstraintTag) -> None:
    n = o.n_samples
    depth = o.arch.hidden_depth
    if tag.kind == NEURON:
        ok = (
            0 <= tag.sample < n
            and 1 <= tag.layer <= depth
            and 0 <= tag.unit < o.arch.widths[tag.layer]
        )
    elif tag.kind == RESIDUAL:
        ok = (
            0 <= tag.sample < n
            and tag.layer == depth + 1
            and 0 <= tag.unit < o.arch.output_dim
        )
    else:
        ok = False
    if not ok:
        raise InvalidTag(f"tag out of range: {tag}")


def enumerate_constraints(o: OracleInstance) -> list[ConstraintTag]:
    """All tags in total order: neuron tags by (sample, layer, unit), then residuals.

    Residual tags carry layer = L+1 and the output coordinate as unit.
    """
    depth = o.arch.hidden_depth
    tags = [
        ConstraintTag(NEURON, i, l, k)
        for i in range(o.n_samples)
        for l in range(1, depth + 1)
        for k in range(o.arch.widths[l])
    ]
    tags.extend(
        ConstraintTag(RESIDUAL, i, depth + 1, j)
        for i in range(o.n_samples)
        for j in range(o.arch.output_dim)
    )
    return tags


def tag_index(o: OracleInstance, tag: ConstraintTag) -> int:
    """Position of a tag in the total order (also its flat array index)."""
    _check_tag(o, tag)
    if tag.kind == NEURON:
        return tag.sample * o.hidden_total + o.layer_offset(tag.layer) + tag.unit
    base = o.n_samples * o.hidden_total
    return base + tag.sample * o.arch.output_dim + tag.unit


def tag_from_index(o: OracleInstance, idx: int) -> ConstraintTag:
    neuron_count = o.n_samples * o.hidden_total
    if idx < 0 or idx >= o.n_constraints:
        raise InvalidTag(f"flat index {idx} out of range")
    if idx < neuron_count:
        sample, rest = divmod(idx, o.hidden_total)
        for l, w in enumerate(o.arch.hidden_widths, start=1):
            if rest < w:
                return ConstraintTag(NEURON, sample, l, rest)
            rest -= w
    idx -= neuron_count
    sample, j = divmod(idx, o.arch.output_dim)
    return ConstraintTag(RESIDUAL, sample, o.arch.hidden_depth + 1, j)


def constraint_values_flat(o: OracleInstance, vals: ConstraintValues) -> np.ndarray:
    """All constraint values ordered by tag index."""
    parts = [np.concatenate([z for z in vals.preacts], axis=1).ravel()]
    parts.append(vals.residuals.ravel())
    return np.concatenate(parts)


def constraint_jvp_flat(
    o: OracleInstance, masks: list[np.ndarray], d: np.ndarray
) -> np.ndarray:
    """Directional derivatives of every constraint along d, region-locally."""
    dmat = d.reshape(o.arch.widths[1], o.arch.widths[0] + 1)
    dz = o.x_aug @ dmat.T
    pieces = [dz]
    dh = dz * masks[0]
    for l, layer in enumerate(o.fixed[:-1], start=2):
        dz = dh @ layer.weight.T
        pieces.append(dz)
        dh = dz * masks[l - 1]
    dout = dh @ o.fixed[-1].weight.T
    parts = [np.concatenate(pieces, axis=1).ravel(), (-dout).ravel()]
    return np.concatenate(parts)


def loss_jvp(
    o: OracleInstance, masks: list[np.ndarray], sigma: np.ndarray, d: np.ndarray
) -> float:
    """Directional derivative of the loss along d inside the region."""
    dmat = d.reshape(o.arch.widths[1], o.arch.widths[0] + 1)
    dh = (o.x_aug @ dmat.T) * masks[0]
    for l, layer in enumerate(o.fixed[:-1], start=2):
        dh = (dh @ layer.weight.T) * masks[l - 1]
    dout = dh @ o.fixed[-1].weight.T
    return float(-np.sum(sigma * dout))


def ratio_test(
    o: OracleInstance,
    p: np.ndarray,
    d: np.ndarray,
    sig: Signature,
    active: list[ConstraintTag] | tuple[ConstraintTag, ...],
) -> tuple[float, ConstraintTag]:
    """First positive step along d at which an inactive constraint hits zero.

    Candidates are constraints moving strictly toward zero; ties resolve to
    the smallest tag. Raises NoCrossing when nothing is hit.
    """
    p = _check_point(o, p)
    vals = forward_values(o, p)
    flat = constraint_values_flat(o, vals)
    dvals = constraint_jvp_flat(o, region_masks(sig), np.asarray(d, dtype=float))
    return _ratio_from_arrays(o, flat, dvals, [tag_index(o, t) for t in active])


def crossing_candidates(
    flat: np.ndarray, dvals: np.ndarray, active_idx: list[int]
) -> np.ndarray:
    """Mask of constraints moving strictly toward zero along a direction.

    Directional derivatives below 1e-12 of the largest one are round-off
    from orthogonality-by-construction, not real movement, and are dropped.
    """
    floor = 1e-12 * float(np.max(np.abs(dvals)))
    toward = (flat * dvals < 0.0) & (np.abs(dvals) > floor)
    if active_idx:
        toward[np.asarray(active_idx, dtype=int)] = False
    return toward


def _ratio_from_arrays(
    o: OracleInstance, flat: np.ndarray, dvals: np.ndarray, active_idx: list[int]
) -> tuple[float, ConstraintTag]:
    toward = crossing_candidates(flat, dvals, active_idx)
    if not np.any(toward):
        raise NoCrossing("no inactive constraint decreases toward zero")
    t = np.full(flat.shape, np.inf)
    t[toward] = -flat[toward] / dvals[toward]
    hit = int(np.argmin(t))
    return float(t[hit]), tag_from_index(o, hit)
