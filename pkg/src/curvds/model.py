"""A trained system bundled with its query-time modifiers, and its JSON form.

The JSON document stores the network layout and flat weights, the
attractor, the SPD parameters of K (and D), and optionally a bump
configuration and a deformation set. Python's float repr is the shortest
string that parses back to the same double, so a save/load round trip is
exact.
"""
from dataclasses import dataclass, field, replace
import json

import numpy as np

from .dynamics import FirstOrderDS, HybridDS, HybridParams, PotentialSpec, SecondOrderDS
from .embeddings import BumpConfig, CompositeEmbedding, GateParams, MlpEmbedding, RbfDeformation
from .errors import PreconditionError
from .geometry import IDENTITY
from .spd import SpdParam

__all__ = ["DSModel", "deformation_to_dict", "deformation_from_dict", "FORMAT_VERSION"]

FORMAT_VERSION = 1


def deformation_to_dict(df):
    out = {
        "kernel": df.kernel,
        "centers": df.centers.tolist(),
        "magnitudes": df.magnitudes.tolist(),
        "sigma": df.sigma.tolist(),
        "a": df.a,
        "b": df.b,
        "radius": df.radius,
    }
    if df.gate is not None:
        out["gate"] = {"tau": df.gate.tau, "theta_ref": df.gate.theta_ref}
    return out


def deformation_from_dict(data):
    gate = data.get("gate")
    return RbfDeformation(data["centers"], data["magnitudes"], data.get("sigma", 1.0),
                          kernel=data.get("kernel", "gaussian"), a=data.get("a", 1.0),
                          b=data.get("b", 1.0), radius=data.get("radius", 0.0),
                          gate=GateParams(**gate) if gate else None)


@dataclass
class DSModel:
    """Learned embedding and potential, plus optional bump and obstacle deformation."""

    embedding: MlpEmbedding
    attractor: np.ndarray
    K: SpdParam
    D: SpdParam = None
    order: int = 1
    bump: BumpConfig = None
    deformation: RbfDeformation = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.attractor = np.asarray(self.attractor, dtype=float)
        if self.order not in (1, 2):
            raise PreconditionError("order must be 1 or 2")
        if self.order == 2 and self.D is None:
            raise PreconditionError("a second-order model needs a damping matrix")
        if self.attractor.size != self.embedding.dim or self.K.dim != self.embedding.dim:
            raise PreconditionError("attractor, K and embedding dimensions differ")

    @classmethod
    def flat(cls, dim, attractor=None, order=1, hidden=(32, 32)):
        """Zero-weight network with ``K = I`` and ``D = 2 I``."""
        K = SpdParam.identity(dim)
        return cls(MlpEmbedding((dim, *hidden, 1)), np.zeros(dim) if attractor is None else attractor,
                   K, K.sqrt_scaled(2.0) if order == 2 else None, order)

    @property
    def dim(self):
        return self.embedding.dim

    def potential(self):
        return PotentialSpec(self.attractor, self.K.matrix(),
                             None if self.D is None else self.D.matrix())

    def surface(self):
        """The embedding used for queries (base, bumped and deformed as configured)."""
        if self.bump is None and self.deformation is None:
            return self.embedding
        return CompositeEmbedding(self.embedding, self.deformation, self.bump)

    def with_deformation(self, deformation):
        return replace(self, deformation=deformation)

    def with_bump(self, bump):
        return replace(self, bump=bump)

    def system(self, order=None, extras=None, hybrid=None, ambient=IDENTITY):
        """Build the dynamical system.

        ``hybrid`` (a `HybridParams` or True) selects the switched field and
        needs a deformation.
        """
        order = order or self.order
        if order == 1:
            return FirstOrderDS(self.surface(), self.potential(), ambient)
        if self.D is None:
            raise PreconditionError("model has no damping matrix")
        if hybrid:
            if self.deformation is None:
                raise PreconditionError("hybrid dynamics need a deformation")
            params = hybrid if isinstance(hybrid, HybridParams) else HybridParams()
            return HybridDS(CompositeEmbedding(self.embedding, self.deformation, self.bump),
                            self.potential(), params)
        return SecondOrderDS(self.surface(), self.potential(), extras, ambient)

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        out = {
            "format": FORMAT_VERSION,
            "order": self.order,
            "layer_sizes": list(self.embedding.layer_sizes),
            "weights": self.embedding.weights.tolist(),
            "attractor": self.attractor.tolist(),
            "K": self.K.to_dict(),
            "D": None if self.D is None else self.D.to_dict(),
            "bump": None,
            "deformation": None,
            "metadata": self.metadata,
        }
        if self.bump is not None:
            out["bump"] = {"radius": self.bump.radius, "neighbors": self.bump.neighbors,
                           "reference_set": self.bump.reference_set.tolist()}
        if self.deformation is not None:
            out["deformation"] = deformation_to_dict(self.deformation)
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            emb = MlpEmbedding(data["layer_sizes"], data["weights"])
            bump = data.get("bump")
            df = data.get("deformation")
            return cls(
                emb,
                data["attractor"],
                SpdParam.from_dict(data["K"]),
                SpdParam.from_dict(data["D"]) if data.get("D") else None,
                int(data.get("order", 1)),
                BumpConfig(bump["radius"], bump["reference_set"], bump.get("neighbors", 5)) if bump else None,
                deformation_from_dict(df) if df else None,
                data.get("metadata", {}),
            )
        except (KeyError, TypeError) as exc:
            raise PreconditionError(f"malformed model document: {exc}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise PreconditionError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)
