"""Kernel feature machinery: random Fourier features and PCA projectors.

A feature map turns raw observations, actions, or stacked windows of them
into fixed-length vectors.  The production path is a Gaussian-kernel RFF
map followed by an uncentered PCA projection; one-hot and linear maps
exist so that discrete and linear-Gaussian systems can be driven through
the same learning and filtering code with exact features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.spatial.distance

from .numerics import DimensionError, as_matrix, khatri_rao, randomized_svd

DEFAULT_MAX_PAIRS = 100_000


@dataclass(frozen=True)
class RffMap:
    """Sampled random Fourier feature map for a Gaussian kernel.

    Rows of ``frequencies`` are i.i.d. Normal(0, bandwidth^-2 I), so the
    inner product of two feature vectors is an unbiased estimate of
    ``exp(-||x - y||^2 / (2 bandwidth^2))``.  The output interleaves
    cos/sin pairs scaled by ``num_freq**-0.5`` and therefore has unit norm
    for every input.
    """

    input_dim: int
    num_freq: int
    bandwidth: float
    frequencies: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.frequencies.shape != (self.num_freq, self.input_dim):
            raise DimensionError(
                f"frequencies shape {self.frequencies.shape} does not match "
                f"(num_freq, input_dim)=({self.num_freq}, {self.input_dim})"
            )

    @property
    def output_dim(self) -> int:
        return 2 * self.num_freq


def sample_rff_map(input_dim: int, num_freq: int, bandwidth: float, seed: int) -> RffMap:
    """Draw the frequency matrix of an RffMap for the given bandwidth."""
    rng = np.random.default_rng(seed)
    freqs = rng.standard_normal((num_freq, input_dim)) / bandwidth
    return RffMap(input_dim, num_freq, bandwidth, freqs, seed)


def rff_apply(rff: RffMap, x: np.ndarray) -> np.ndarray:
    """Featurize a vector (input_dim,) or column batch (input_dim, n).

    Output entry 2i is cos(w_i . x) and 2i+1 is sin(w_i . x), both scaled
    by num_freq**-0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    cols = x[:, None] if single else x
    if cols.shape[0] != rff.input_dim:
        raise DimensionError(
            f"input has dim {cols.shape[0]}, map expects {rff.input_dim}"
        )
    z = rff.frequencies @ cols  # (D, n)
    out = np.empty((2 * rff.num_freq, cols.shape[1]))
    scale = 1.0 / np.sqrt(rff.num_freq)
    out[0::2] = np.cos(z) * scale
    out[1::2] = np.sin(z) * scale
    return out[:, 0] if single else out


def median_bandwidth(points: np.ndarray, max_pairs: int = DEFAULT_MAX_PAIRS, seed: int = 0) -> float:
    """Median Euclidean distance between points (columns), the median trick.

    Uses all n(n-1)/2 unordered pairs when that count fits in ``max_pairs``,
    otherwise a uniform sample of ``max_pairs`` pairs.

    Raises:
        ValueError: fewer than two points, or median distance zero.
    """
    pts = as_matrix(points, "points")
    n = pts.shape[1]
    if n < 2:
        raise ValueError(f"median_bandwidth needs at least 2 points, got {n}")
    total_pairs = n * (n - 1) // 2
    if total_pairs <= max_pairs:
        dists = scipy.spatial.distance.pdist(pts.T)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = np.where(j >= i, j + 1, j)  # uniform over ordered pairs with i != j
        dists = np.linalg.norm(pts[:, i] - pts[:, j], axis=0)
    med = float(np.median(dists))
    if med <= 0.0:
        raise ValueError("degenerate bandwidth: median pairwise distance is zero")
    return med


@dataclass(frozen=True)
class PcaProjector:
    """Orthonormal compression basis; columns of ``basis`` span the kept subspace."""

    basis: np.ndarray = field(repr=False)  # (input_dim, output_dim)

    def __post_init__(self):
        u = self.basis
        if u.ndim != 2:
            raise DimensionError(f"basis must be 2-D, got shape {u.shape}")
        gram_err = np.linalg.norm(u.T @ u - np.eye(u.shape[1]))
        if gram_err > 1e-10:
            raise ValueError(f"basis columns not orthonormal (||U'U - I|| = {gram_err:.2e})")

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Compress a vector or column batch: U^T x."""
        return self.basis.T @ x

    def lift(self, y: np.ndarray) -> np.ndarray:
        """Map compressed coordinates back to the ambient space: U y."""
        return self.basis @ y


def pca_fit(data_columns: np.ndarray, p: int, seed: int = 0) -> PcaProjector:
    """Fit an uncentered PCA basis from the top-p left singular subspace."""
    u, _ = randomized_svd(data_columns, p, seed=seed)
    return PcaProjector(u)


class RffFeaturizer:
    """RFF map followed by an optional PCA compression."""

    def __init__(self, rff: RffMap, pca: PcaProjector | None = None):
        if pca is not None and pca.input_dim != rff.output_dim:
            raise DimensionError(
                f"pca expects dim {pca.input_dim}, rff outputs {rff.output_dim}"
            )
        self.rff = rff
        self.pca = pca

    @property
    def input_dim(self) -> int:
        return self.rff.input_dim

    @property
    def dim(self) -> int:
        return self.pca.output_dim if self.pca is not None else self.rff.output_dim

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = rff_apply(self.rff, x)
        return out if self.pca is None else self.pca.apply(out)

    def raw(self, x: np.ndarray) -> np.ndarray:
        """Feature vector before PCA compression."""
        return rff_apply(self.rff, x)


class OneHotFeaturizer:
    """Kronecker indicator features for stacked one-hot blocks.

    The input is a concatenation of one-hot blocks with sizes ``dims``; the
    output is their Kronecker product, an indicator over the joint
    assignment.  An empty ``dims`` yields the constant feature [1.0].
    """

    def __init__(self, dims: list[int]):
        self.dims = list(dims)

    @property
    def input_dim(self) -> int:
        return int(sum(self.dims))

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims)) if self.dims else 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        cols = x[:, None] if single else x
        if cols.shape[0] != self.input_dim:
            raise DimensionError(
                f"input has dim {cols.shape[0]}, expected {self.input_dim}"
            )
        out = np.ones((1, cols.shape[1]))
        offset = 0
        for d in self.dims:
            out = khatri_rao(out, cols[offset : offset + d])
            offset += d
        return out[:, 0] if single else out


class LinearFeaturizer:
    """Identity features, optionally with an appended constant coordinate."""

    def __init__(self, input_dim: int, append_one: bool = False, pca: PcaProjector | None = None):
        if pca is not None and pca.input_dim != input_dim + int(append_one):
            raise DimensionError("pca input dim does not match featurizer output")
        self.input_dim = input_dim
        self.append_one = append_one
        self.pca = pca

    @property
    def dim(self) -> int:
        if self.pca is not None:
            return self.pca.output_dim
        return self.input_dim + int(self.append_one)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        cols = x[:, None] if single else x
        if cols.shape[0] != self.input_dim:
            raise DimensionError(
                f"input has dim {cols.shape[0]}, expected {self.input_dim}"
            )
        out = cols
        if self.append_one:
            out = np.vstack([cols, np.ones((1, cols.shape[1]))])
        if self.pca is not None:
            out = self.pca.apply(out)
        return out[:, 0] if single else out

    def raw(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        cols = x[:, None] if single else x
        out = np.vstack([cols, np.ones((1, cols.shape[1]))]) if self.append_one else cols
        return out[:, 0] if single else out


Featurizer = RffFeaturizer | OneHotFeaturizer | LinearFeaturizer


def array_to_json(a: np.ndarray) -> dict:
    """Shape-annotated nested-list encoding used in model files."""
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.tolist()}


def array_from_json(d: dict) -> np.ndarray:
    a = np.asarray(d["data"], dtype=np.float64)
    return a.reshape(d["shape"])


def featurizer_to_json(f: Featurizer) -> dict:
    if isinstance(f, RffFeaturizer):
        return {
            "kind": "rff",
            "input_dim": f.rff.input_dim,
            "num_freq": f.rff.num_freq,
            "bandwidth": f.rff.bandwidth,
            "seed": f.rff.seed,
            "frequencies": array_to_json(f.rff.frequencies),
            "pca": None if f.pca is None else array_to_json(f.pca.basis),
        }
    if isinstance(f, OneHotFeaturizer):
        return {"kind": "one_hot", "dims": f.dims}
    if isinstance(f, LinearFeaturizer):
        return {
            "kind": "linear",
            "input_dim": f.input_dim,
            "append_one": f.append_one,
            "pca": None if f.pca is None else array_to_json(f.pca.basis),
        }
    raise TypeError(f"unknown featurizer type {type(f)!r}")


def featurizer_from_json(d: dict) -> Featurizer:
    kind = d["kind"]
    if kind == "rff":
        rff = RffMap(
            d["input_dim"],
            d["num_freq"],
            d["bandwidth"],
            array_from_json(d["frequencies"]),
            d["seed"],
        )
        pca = None if d["pca"] is None else PcaProjector(array_from_json(d["pca"]))
        return RffFeaturizer(rff, pca)
    if kind == "one_hot":
        return OneHotFeaturizer(d["dims"])
    if kind == "linear":
        pca = None if d["pca"] is None else PcaProjector(array_from_json(d["pca"]))
        return LinearFeaturizer(d["input_dim"], d["append_one"], pca)
    raise ValueError(f"unknown featurizer kind {kind!r}")
