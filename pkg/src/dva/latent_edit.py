"""Identity-feature editing: classifier hyperplanes and embedding-guided search.

Classifier editing fits a logistic regression on normalized identity
features and walks z_id along the hyperplane normal:
l2Norm(DeNorm(Norm(z_id) + s * w_attr)).

Embedding-guided editing optimizes a free copy of z_id so that the change
between images decoded with the original and the optimized identity aligns
with a prototype direction in embedder space. The comparison is
level-matched: at each coarse diffusion level the clean-side reconstruction
x_hat(t_s) is paired with the edited single reverse step from the level
above, so the embedder never sees a clean/noisy mismatch. The ablation mode
compares denoised estimates against the original frame instead.
"""

from __future__ import annotations

import datetime as _dt
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.linear_model import LogisticRegression

from .ddim import forward_step, make_step_schedule, reverse_step
from .errors import ConfigError, DataFormatError, TrainingDiverged
from .schedule import predict_x0

__all__ = [
    "EditDirection",
    "EmbedEditConfig",
    "fit_attribute_classifier",
    "fit_synthetic_attribute_direction",
    "edit_identity",
    "save_direction",
    "load_direction",
    "attribute_prototypes",
    "directional_embed_loss",
    "optimize_identity",
]

_DIRECTION_MAGIC = "dva-edit-direction"


@dataclass
class EditDirection:
    """Attribute hyperplane in normalized identity space, plus the stats."""

    w_attr: np.ndarray  # hyperplane normal
    mean: np.ndarray  # feature population mean (Norm/DeNorm)
    std: np.ndarray  # feature population std, strictly positive
    bias: float = 0.0  # classifier intercept, for probability readouts
    s: float = 1.0  # default editing step size
    attribute: str = ""

    def __post_init__(self):
        self.w_attr = np.asarray(self.w_attr, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if not (self.w_attr.shape == self.mean.shape == self.std.shape):
            raise ConfigError("direction, mean, and std must share one shape")
        if self.w_attr.ndim != 1:
            raise ConfigError("edit direction must be a vector")
        stats = np.concatenate([self.w_attr, self.mean, self.std])
        if not np.isfinite(stats).all():
            raise ConfigError("direction and normalization stats must be finite")
        if not (self.std > 0).all():
            raise ConfigError("feature std must be strictly positive elementwise")

    @property
    def dim(self) -> int:
        return self.w_attr.shape[0]

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def logit(self, z) -> float:
        """Classifier logit of the target attribute for one identity feature."""
        return float(self.w_attr @ self.normalize(self._vec(z)) + self.bias)

    def predict_proba(self, z) -> float:
        return float(1.0 / (1.0 + np.exp(-self.logit(z))))

    def _vec(self, z) -> np.ndarray:
        z = np.asarray(torch.as_tensor(z).detach().cpu().numpy(), dtype=np.float64)
        if z.shape != (self.dim,):
            raise ValueError(f"expected identity feature of dim {self.dim}, got {z.shape}")
        return z


def fit_attribute_classifier(features, labels, attribute: str = "", s: float = 1.0) -> EditDirection:
    """Logistic regression on mean/std-normalized identity features."""
    x = np.asarray(torch.as_tensor(features).detach().cpu().numpy(), dtype=np.float64)
    y = np.asarray(labels).astype(int).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"features {x.shape} and labels {y.shape} do not align")
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise ValueError(
            f"need at least 2 samples per class, got {counts[0]} negative / {counts[1]} positive"
        )
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)  # constant feature coordinates stay as-is
    clf = LogisticRegression(max_iter=2000)
    clf.fit((x - mean) / std, y)
    return EditDirection(
        w_attr=clf.coef_[0], mean=mean, std=std,
        bias=float(clf.intercept_[0]), s=s, attribute=attribute,
    )


def fit_synthetic_attribute_direction(id_enc, attribute: str, renders_per_identity: int = 3,
                                      s: float = 1.0, seed: int = 0) -> EditDirection:
    """Fit an attribute hyperplane on freshly rendered identity features.

    The attribute must be one of the binary identity factors; every identity
    in the grid contributes ``renders_per_identity`` random renders.
    """
    from .encoders import _random_pose, _render_frame
    from .synthdata import all_identities

    if attribute not in ("ring", "stripe"):
        raise ConfigError(f"attribute must be 'ring' or 'stripe', got {attribute!r}")
    rng = np.random.default_rng(seed)
    frames, labels = [], []
    for identity in all_identities():
        for _ in range(renders_per_identity):
            frames.append(_render_frame(rng, identity, _random_pose(rng), id_enc.resolution))
            labels.append(int(getattr(identity, attribute)))
    with torch.no_grad():
        features = id_enc.encode(torch.from_numpy(np.stack(frames)))
    return fit_attribute_classifier(features, np.array(labels), attribute=attribute, s=s)


def edit_identity(z_id, direction: EditDirection, s: float | None = None):
    """l2Norm(DeNorm(Norm(z_id) + s*w_attr)); returns the same kind as given."""
    was_torch = isinstance(z_id, torch.Tensor)
    z = direction._vec(z_id)
    step = direction.s if s is None else float(s)
    edited = direction.denormalize(direction.normalize(z) + step * direction.w_attr)
    edited = edited / np.linalg.norm(edited)
    if was_torch:
        return torch.as_tensor(edited, dtype=torch.as_tensor(z_id).dtype)
    return edited


def save_direction(path, direction: EditDirection, provenance: str = ""):
    """Persist as a text header plus float64 blobs (w_attr, mean, std)."""
    path = Path(path)
    blobs = [direction.w_attr, direction.mean, direction.std]
    lines = [
        f"{_DIRECTION_MAGIC} 1",
        f"attribute {direction.attribute or '-'}",
        f"provenance {provenance or '-'}",
        f"date {_dt.date.today().isoformat()}",
        f"dim {direction.dim}",
        f"s {direction.s!r}",
        f"bias {direction.bias!r}",
        "end",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode("utf-8"))
            for blob in blobs:
                fh.write(blob.astype("<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_direction(path) -> EditDirection:
    path = Path(path)
    raw = path.read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0 or not raw.startswith(_DIRECTION_MAGIC.encode()):
        raise DataFormatError(f"{path}: not an edit-direction file")
    header = {}
    for line in raw[:cut].decode("utf-8").splitlines()[1:]:
        key, _, value = line.partition(" ")
        header[key] = value
    try:
        dim = int(header["dim"])
        s = float(header["s"])
        bias = float(header["bias"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed direction header ({exc})") from exc
    payload = raw[cut + len(marker):]
    if len(payload) != 3 * 8 * dim:
        raise DataFormatError(f"{path}: expected {3 * 8 * dim} payload bytes, got {len(payload)}")
    vecs = np.frombuffer(payload, dtype="<f8").reshape(3, dim)
    attribute = header.get("attribute", "-")
    return EditDirection(
        w_attr=vecs[0], mean=vecs[1], std=vecs[2], bias=bias, s=s,
        attribute="" if attribute == "-" else attribute,
    )


_MODES = ("intermediate-noisy", "estimated-x0")


@dataclass
class EmbedEditConfig:
    """Hyperparameters of embedding-guided identity optimization."""

    S: int = 5
    w_clip: float = 3.0
    w_id: float = 1.0
    w_l1: float = 1.0
    lr: float = 2e-3
    steps: int = 200
    mode: str = "intermediate-noisy"
    proto_neutral: torch.Tensor = field(default=None)
    proto_target: torch.Tensor = field(default=None)

    def __post_init__(self):
        if self.S < 1:
            raise ConfigError(f"S must be >= 1, got {self.S}")
        if min(self.w_clip, self.w_id, self.w_l1) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lr <= 0 or self.steps < 0:
            raise ConfigError("need lr > 0 and steps >= 0")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.w_clip > 0:
            if self.proto_neutral is None or self.proto_target is None:
                raise ConfigError("prototype vectors are required when w_clip > 0")
            if torch.allclose(
                torch.as_tensor(self.proto_neutral).double(),
                torch.as_tensor(self.proto_target).double(),
            ):
                raise ConfigError("prototypes must differ")


def attribute_prototypes(id_enc, attribute: str, n_per_side: int = 48,
                         resolution: int = 32, seed: int = 0):
    """Mean embedder outputs over renders without/with the attribute bit."""
    from .encoders import _random_pose, _render_frame
    from .synthdata import all_identities

    if attribute not in ("ring", "stripe"):
        raise ConfigError(f"attribute must be 'ring' or 'stripe', got {attribute!r}")
    rng = np.random.default_rng(seed)
    identities = all_identities()
    sides = {False: [], True: []}
    while min(len(v) for v in sides.values()) < n_per_side:
        identity = identities[int(rng.integers(len(identities)))]
        value = getattr(identity, attribute)
        if len(sides[value]) < n_per_side:
            sides[value].append(_render_frame(rng, identity, _random_pose(rng), resolution))
    protos = []
    with torch.no_grad():
        for value in (False, True):
            protos.append(id_enc.embed(torch.from_numpy(np.stack(sides[value]))).mean(dim=0))
    return protos[0], protos[1]


def _image_direction(img_neutral, img_target, embedder):
    batch_n = img_neutral if img_neutral.ndim == 4 else img_neutral[None]
    batch_t = img_target if img_target.ndim == 4 else img_target[None]
    return (embedder.embed(batch_t) - embedder.embed(batch_n)).reshape(-1)


def _directional_term(d_img, d_proto):
    """1 - cos of the two directions; the eps-clamped cosine keeps this
    finite (value 1) when the image direction is exactly zero, which happens
    on the very first optimization step where the edit equals the original."""
    return 1.0 - F.cosine_similarity(d_img[None], d_proto.to(d_img.dtype)[None])[0]


def directional_embed_loss(img_neutral, img_target, proto_neutral, proto_target, embedder):
    """Cosine distance between the image-pair direction and the prototype
    direction in embedder space; 0 iff positively collinear, 2 if opposite."""
    d_proto = (torch.as_tensor(proto_target) - torch.as_tensor(proto_neutral)).double()
    if float(d_proto.norm()) < 1e-12:
        raise ValueError("prototype direction has zero norm (identical prototypes)")
    d_img = _image_direction(img_neutral, img_target, embedder)
    if float(d_img.detach().double().norm()) < 1e-12:
        raise ValueError("image direction has zero norm (images embed identically)")
    return _directional_term(d_img, d_proto)


def optimize_identity(system, frame, mask, z_id, cfg: EmbedEditConfig) -> torch.Tensor:
    """Search for Delta z_id that moves decoded frames toward the target
    attribute while staying close to the original identity.

    The coarse S-step trajectory under the original identity is computed
    once; each optimizer step redoes the edited single reverse steps with
    gradient and scores them level-matched against that trajectory.
    Returns Delta z_id = z_id_opt - z_id.
    """
    sched = system.noise_schedule()
    fold = make_step_schedule(sched.T, cfg.S)
    x0 = torch.as_tensor(frame, dtype=torch.float32)
    if x0.ndim == 3:
        x0 = x0[None]
    m = torch.as_tensor(mask, dtype=torch.float32).reshape(1, 1, *x0.shape[2:])
    z_id = torch.as_tensor(z_id, dtype=torch.float32).reshape(-1)

    with torch.no_grad():
        z_lnd = system.lnd_enc.encode(x0)
        z_face_orig = system.model.fuse(z_id[None], z_lnd)
        estimator = system.model.ddim_estimator(z_face_orig)
        # clean-side trajectory: invert to the top, then reverse, keeping levels
        x_top = x0
        for t_prev, t in fold.pairs_ascending():
            x_top = forward_step(sched, estimator, x_top, t_prev, t)
        hats = {int(fold.steps[-1]): x_top}
        x = x_top
        for t, t_prev in fold.pairs_descending():
            x = reverse_step(sched, estimator, x, t, t_prev)
            hats[t_prev] = x

    z_opt = z_id.clone().requires_grad_(True)
    opt = torch.optim.Adam([z_opt], lr=cfg.lr)
    pairs = fold.pairs_descending()  # [(t_S, t_{S-1}), ..., (t_1, 0)]
    d_proto = None
    if cfg.w_clip > 0:
        d_proto = (
            torch.as_tensor(cfg.proto_target) - torch.as_tensor(cfg.proto_neutral)
        ).float()

    for _ in range(cfg.steps):
        z_face_opt = system.model.fuse(z_opt[None], z_lnd)
        loss = z_opt.new_zeros(())
        for level, (t, t_prev) in enumerate(pairs):
            eps_hat = system.model.estimate_noise(hats[t], t, z_face_opt)
            if cfg.mode == "intermediate-noisy":
                x_edit = reverse_step(
                    sched, lambda x_, t_, c: eps_hat, hats[t], t, t_prev
                )
                reference = hats[t_prev]
            else:  # estimated-x0: denoised guess against the original frame
                x_edit = predict_x0(sched, hats[t], t, eps_hat)
                reference = x0
            term = z_opt.new_zeros(())
            if cfg.w_clip > 0:
                d_img = _image_direction(reference, x_edit, system.id_enc)
                term = term + cfg.w_clip * _directional_term(d_img, d_proto)
            if cfg.w_id > 0:
                term = term + cfg.w_id * (
                    1.0 - F.cosine_similarity(z_opt[None], z_id[None])[0]
                )
            if cfg.w_l1 > 0:
                term = term + cfg.w_l1 * (m * (reference - x_edit)).abs().mean()
            if not torch.isfinite(term):
                raise TrainingDiverged(
                    f"non-finite edit loss at level s={len(pairs) - level} (t={t})"
                )
            loss = loss + term
        opt.zero_grad()
        loss.backward()
        opt.step()

    return (z_opt - z_id).detach()
