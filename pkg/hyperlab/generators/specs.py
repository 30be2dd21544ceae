"""Process specifications, parsed from JSON documents such as {"kind": "collapse", "N": 4}."""

import math
from typing import Annotated, List, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, TypeAdapter, ValidationError
from scipy import integrate
from scipy.special import gamma

from hyperlab.core.errors import EmptyMixture, InvalidConfig


class ZeroLaw(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["zero"] = "zero"

    def moment(self, p: float) -> float:
        return 0.0


class GaussianLaw(BaseModel):
    """Isotropic Gaussian displacement, `std` per coordinate."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["gaussian"] = "gaussian"
    std: PositiveFloat

    def moment(self, p: float) -> float:
        # |v| is Rayleigh with scale std
        return float((math.sqrt(2.0) * self.std) ** p * gamma(1.0 + p / 2.0))


class PowerTailLaw(BaseModel):
    """Radial law with planar density proportional to (1 + |v|/scale)^-(2 + alpha).

    E|v|^p is finite exactly when p < alpha.
    """

    model_config = ConfigDict(frozen=True)
    kind: Literal["power_tail"] = "power_tail"
    alpha: PositiveFloat
    scale: PositiveFloat = 1.0

    def radial_cdf(self, s: np.ndarray) -> np.ndarray:
        w = 1.0 / (1.0 + np.asarray(s, dtype=float))
        a = self.alpha
        return 1.0 - (1.0 + a) * w**a + a * w ** (1.0 + a)

    def moment(self, p: float) -> float:
        if p >= self.alpha:
            return math.inf
        a = self.alpha
        density = lambda s: a * (1.0 + a) * s * (1.0 + s) ** (-(2.0 + a))
        value, _ = integrate.quad(lambda s: s**p * density(s), 0.0, np.inf, limit=200)
        return float(self.scale**p * value)


DisplacementLaw = Annotated[Union[ZeroLaw, GaussianLaw, PowerTailLaw], Field(discriminator="kind")]


class PoissonSpec(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["poisson"] = "poisson"
    intensity: PositiveFloat = 1.0


class LatticeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["lattice"] = "lattice"


class PerturbedLatticeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["perturbed"] = "perturbed"
    law: DisplacementLaw = Field(default_factory=ZeroLaw)


class CollapseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["collapse"] = "collapse"
    N: int = Field(ge=2)
    jitter: float = Field(default=0.0, ge=0.0)


class BinomialSpec(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["binomial"] = "binomial"
    N: int = Field(ge=1)


class MixtureComponent(BaseModel):
    model_config = ConfigDict(frozen=True)
    weight: PositiveFloat
    spec: "ProcessSpec"


class MixtureSpec(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["mixture"] = "mixture"
    components: List[MixtureComponent] = Field(default_factory=list)

    def normalized_weights(self) -> np.ndarray:
        if not self.components:
            raise EmptyMixture("mixture has no components")
        weights = np.array([component.weight for component in self.components], dtype=float)
        return weights / weights.sum()


ProcessSpec = Annotated[
    Union[PoissonSpec, LatticeSpec, PerturbedLatticeSpec, CollapseSpec, BinomialSpec, MixtureSpec],
    Field(discriminator="kind"),
]
MixtureComponent.model_rebuild()
MixtureSpec.model_rebuild()

_SPEC_ADAPTER = TypeAdapter(ProcessSpec)


def parse_process_spec(document: Union[str, bytes, dict]) -> ProcessSpec:
    """Validate a JSON text (or an already-decoded dict) into a ProcessSpec."""
    try:
        if isinstance(document, dict):
            return _SPEC_ADAPTER.validate_python(document)
        return _SPEC_ADAPTER.validate_json(document)
    except ValidationError as e:
        raise InvalidConfig(f"invalid process spec: {e}") from e


def spec_to_dict(spec: ProcessSpec) -> dict:
    return _SPEC_ADAPTER.dump_python(spec, mode="json")


def spec_label(spec: ProcessSpec) -> str:
    """Short human-readable tag used in reports and CSVs."""
    if isinstance(spec, PoissonSpec):
        return "poisson" if spec.intensity == 1.0 else f"poisson(intensity={spec.intensity:g})"
    if isinstance(spec, LatticeSpec):
        return "lattice"
    if isinstance(spec, PerturbedLatticeSpec):
        law = spec.law
        if isinstance(law, GaussianLaw):
            return f"perturbed(gaussian std={law.std:g})"
        if isinstance(law, PowerTailLaw):
            return f"perturbed(power_tail alpha={law.alpha:g})"
        return "perturbed(zero)"
    if isinstance(spec, CollapseSpec):
        return f"collapse(N={spec.N})"
    if isinstance(spec, BinomialSpec):
        return f"binomial(N={spec.N})"
    inner = ", ".join(f"{c.weight:.3g}*{spec_label(c.spec)}" for c in spec.components)
    return f"mixture({inner})"


def block_sizes(spec: ProcessSpec) -> List[int]:
    """Every block parameter N used by the spec (mixtures included)."""
    if isinstance(spec, (CollapseSpec, BinomialSpec)):
        return [spec.N]
    if isinstance(spec, MixtureSpec):
        return [n for component in spec.components for n in block_sizes(component.spec)]
    return []


def has_exact_count(spec: ProcessSpec) -> bool:
    """True when every sample carries exactly L^2 points."""
    if isinstance(spec, PoissonSpec):
        return False
    if isinstance(spec, MixtureSpec):
        return all(has_exact_count(component.spec) for component in spec.components)
    return True


def dyadic_collapse_mixture(j_max: int, j_min: int = 1, tail_exponent: float = 1.5) -> MixtureSpec:
    """Collapse blocks N = 2^j, j_min..j_max, with weights proportional to 1/(N^2 j^tail_exponent).

    For tail_exponent in (1, 2] the untruncated series has sum alpha_N N^2 finite and
    sum alpha_N N^2 log N infinite.
    """
    components = [
        MixtureComponent(weight=1.0 / (4.0**j * j**tail_exponent), spec=CollapseSpec(N=2**j))
        for j in range(j_min, j_max + 1)
    ]
    return MixtureSpec(components=components)
