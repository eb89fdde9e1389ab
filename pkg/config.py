import os

# Settings whose requested value was overridden by a floor or a ceiling.
# Recorded here rather than logged immediately: this module cannot import the
# logger, since logger.py reads its level from here and importing it back
# would be circular. main.py logs each of these once the logger exists.
CLAMP_NOTICES: list = []


def _clamped(
    name: str, requested, low=None, high=None, low_label=None, high_label=None
):
    """Apply a floor and/or a ceiling to a user-supplied setting.

    Returns the value actually in force. When a bound moves the value away
    from what was requested, appends a notice to CLAMP_NOTICES naming the
    setting, what was asked for, and what is running instead.

    The bound that gets blamed is decided from the request: above the ceiling
    blames the ceiling, anything else that moved blames the floor. A derived
    bound can name where it came from through low_label / high_label.
    """
    applied = requested
    if low is not None:
        applied = max(low, applied)
    if high is not None:
        applied = min(high, applied)
    if applied != requested:
        if high is not None and requested > high:
            bound = high_label if high_label is not None else f"{high:g}"
            reason = f"ceiling is {bound}"
        else:
            assert low is not None, f"{name} changed with no bound to blame it on"
            bound = low_label if low_label is not None else f"{low:g}"
            reason = f"floor is {bound}"
        CLAMP_NOTICES.append(
            f"{name} was requested as {requested:g} but is running as "
            f"{applied:g} ({reason})"
        )
    return applied


# Log level, taken from the environment. INFO unless overridden.
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Worker processes for Monte Carlo trials when --jobs is not given. One by
# default: the report does not depend on it, but one worker is the cheapest.
JOBS = _clamped("MATROUND_JOBS", int(os.getenv("MATROUND_JOBS", "1")), low=1)

# Trials handed to a worker in one submission.
TRIAL_CHUNK = _clamped(
    "MATROUND_TRIAL_CHUNK", int(os.getenv("MATROUND_TRIAL_CHUNK", "500")), low=1
)

# Largest ground set for which anything enumerates all 2^n subsets: rank
# tables, separation, hit_constraint, decomposition, exact multilinear
# values. Past 24 a single table no longer fits in memory comfortably.
BRUTE_FORCE_LIMIT = _clamped(
    "MATROUND_BRUTE_FORCE_LIMIT",
    int(os.getenv("MATROUND_BRUTE_FORCE_LIMIT", "20")),
    low=1,
    high=24,
)

# Largest ground set for which solvers take gradients exactly, by
# enumeration, instead of by coupled sampling. Enumeration is one of the
# brute-force paths, so it cannot reach past their limit.
EXACT_GRADIENT_LIMIT = _clamped(
    "MATROUND_EXACT_GRADIENT_LIMIT",
    int(os.getenv("MATROUND_EXACT_GRADIENT_LIMIT", "12")),
    low=0,
    high=BRUTE_FORCE_LIMIT,
    high_label=f"MATROUND_BRUTE_FORCE_LIMIT ({BRUTE_FORCE_LIMIT})",
)

# Standard errors of slack in every one-sided statistical check. Below one
# the checks fail on noise alone.
SE_SLACK = _clamped(
    "MATROUND_SE_SLACK", float(os.getenv("MATROUND_SE_SLACK", "4.0")), low=1.0
)

# Solver defaults. Each one is overridden by the matching CLI flag.
#
# epsilon must stay inside (0, 1/2): the knapsack pipeline shrinks its region
# by (1 - epsilon) and the bicriteria solver accepts cost up to (1 + epsilon)
# times the LP optimum.
EPSILON = _clamped(
    "MATROUND_EPSILON",
    float(os.getenv("MATROUND_EPSILON", "0.1")),
    low=0.01,
    high=0.49,
)
GREEDY_STEPS = _clamped(
    "MATROUND_GREEDY_STEPS", int(os.getenv("MATROUND_GREEDY_STEPS", "100")), low=10
)
GRADIENT_SAMPLES = _clamped(
    "MATROUND_GRADIENT_SAMPLES",
    int(os.getenv("MATROUND_GRADIENT_SAMPLES", "10000")),
    low=1,
)
DEPTH = _clamped("MATROUND_DEPTH", int(os.getenv("MATROUND_DEPTH", "2")), low=0)
SOLVER_TRIALS = _clamped(
    "MATROUND_SOLVER_TRIALS", int(os.getenv("MATROUND_SOLVER_TRIALS", "25")), low=1
)

# Numerical tolerances. Not settable from the environment: every assertion in
# the test suite is written against these exact values.
#
# A coordinate is integral within this distance of 0 or 1, and membership
# constraints hold within it.
MEMBERSHIP_TOL = 1e-9
# Values this close to a bound are snapped onto it after each elementary step.
CLAMP_TOL = 1e-12
# A constraint violated by more than this triggers a cut.
SEPARATION_TOL = 1e-9
LP_FEASIBILITY_TOL = 1e-7
# Past this residual a simplex answer is reported as a numerical failure.
LP_NUMERICAL_TOL = 1e-6
