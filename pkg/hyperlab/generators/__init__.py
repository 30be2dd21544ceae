from hyperlab.generators.processes import (
    gen_binomial_blocks,
    gen_collapse_blocks,
    gen_mixture,
    gen_perturbed_lattice,
    gen_poisson,
    gen_stationary_lattice,
    sample,
    sample_ensemble,
)
from hyperlab.generators.specs import (
    BinomialSpec,
    CollapseSpec,
    GaussianLaw,
    LatticeSpec,
    MixtureComponent,
    MixtureSpec,
    PerturbedLatticeSpec,
    PoissonSpec,
    PowerTailLaw,
    ProcessSpec,
    ZeroLaw,
    dyadic_collapse_mixture,
    parse_process_spec,
    spec_label,
)
