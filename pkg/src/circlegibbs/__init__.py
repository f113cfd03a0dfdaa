"""Spectral Monte Carlo toolkit for conditioned Gibbs measures on the circle.

Layers, bottom up: truncated Fourier fields and observables (field),
reproducible Wiener sampling (sampling), the joint mass/momentum density
from its characteristic function (density), conditioned ensembles
(conditioning), Gibbs reweighting and tail diagnostics (gibbs), and the
split-step NLS flow with its invariance harness (flow).
"""

from .field import (
    AreaRule,
    FourierField,
    Nonlinearity,
    ObservableRecord,
    QuadratureOverflow,
    field_from_modes,
    hamiltonian,
    hs_norm,
    levy_area_discrete,
    lp_integral,
    lp_norm,
    mass,
    momentum,
    observables,
    zero_field,
)
from .sampling import (
    SamplerConfig,
    StreamAllocator,
    sample_loop_areas,
    sample_mass_momentum,
    sample_standard_bm_loop,
    sample_wiener,
)

__version__ = "0.1.0"

from .density import (
    CharFnSpec,
    CutoffTooSmall,
    DensityGrid,
    char_fn,
    invert_density,
    marginal_momentum_density,
    positivity_report,
)
from .conditioning import (
    BudgetExhausted,
    ConditioningSpec,
    Ensemble,
    MissingDensity,
    ModulusBox,
    epsilon_sweep,
    low_mode_marginal,
    sample_conditioned,
)
from .gibbs import (
    DegenerateWeights,
    GibbsSpec,
    InsufficientTailEvents,
    TailReport,
    dyadic_decomposition,
    estimate_partition,
    expectation_mu,
    gibbs_weight,
    hs_tail_check,
    large_deviation_check,
    tail_check,
)
from .flow import (
    FlowSpec,
    Instability,
    InvarianceReport,
    MismatchedSpec,
    evolve,
    invariance_test,
    levy_area_conservation_probe,
    step,
)
