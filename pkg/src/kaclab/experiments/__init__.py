"""Initial data, studies, validation checks and reports."""
from .checks import (branching_check, conservation_run, correlation_scan, generator_check,
                     kac_environment, representation_check, tanh_weight)
from .initial import (chaotic_init, equilibrium_sample, fibonacci_sphere, heavy_tailed_init,
                      heavy_tailed_sample, maxwellian_init, nonchaotic_init, reflections)
from .report import StudyReport, loglog_slope, mean_se, pmap, resolve_threads
from .studies import (STUDIES, chaos_diagnostic, chaos_study, convergence_study,
                      iid_baseline_study, moment_study, nonchaotic_study, occupation,
                      recurrence_function, recurrence_study, reference_pools, relaxation_study,
                      run_snapshots, run_study, uniform_time_study)
