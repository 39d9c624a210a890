"""Second-order subexponential tail asymptotics of infinitely divisible laws."""

from .laws import (AnalyticLaw, AtomicLaw, GriddedMeasure, LogTail, PowerTail, Restricted,
                   discretize, exponential, lognormal, parse_law, pareto, point_mass, weibull)
from .conv import (CompoundWeights, Folds, compound_tail, convolve_grid, nfold_tail,
                   poisson_weights, tail_convolve)
from .infdiv import (CompoundPoissonLaw, LevySpec, compound_poisson, invert_levy, laplace,
                     power, sigma_from_spec)
from .asym import (RegVaryingTail, SecondOrderPrediction, c_alpha, k_alpha, karamata_lstar,
                   karamata_lsub, predict_compound, predict_density_versions,
                   predict_mu_from_nu, predict_nu_from_mu, predict_power, predict_rv)
from .diag import (DiagnosticReport, check_Lloc, check_omey_willekens, check_remark12,
                   check_S2d, check_S2loc, check_S2loc_hypotheses, check_Sd, check_Sloc,
                   validate_example)

__version__ = "0.1.0"
