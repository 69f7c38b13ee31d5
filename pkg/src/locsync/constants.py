"""Physical constants and shared defaults (SI units)."""

# Speed of light in vacuum, m/s (exact by definition).
SPEED_OF_LIGHT = 299792458.0

# Per-node state layout: [px, py, pz, offset, bias].
STATE_DIM = 5
POS_SLICE = slice(0, 3)
OFFSET_INDEX = 3
BIAS_INDEX = 4

# Default one-sigma timestamp noise (s). 0.3 ns is typical of UWB hardware
# counters; at the speed of light it is about 9 cm of one-way range.
DEFAULT_TIMESTAMP_STD = 0.3e-9

# Default turnaround (response delay) range inside an exchange, seconds.
DEFAULT_TURNAROUND_RANGE = (0.5e-3, 2.0e-3)

# Default truth initialization ranges: clock offset (s) and frequency bias
# (dimensionless, 2e-6 = 2 ppm).
DEFAULT_OFFSET_INIT_RANGE = 100e-6
DEFAULT_BIAS_INIT_RANGE = 2e-6

# Default clock process noise densities: offset random walk (s^2/s) and bias
# random walk (1/s). Crystal-oscillator scale.
DEFAULT_OFFSET_PROCESS_DENSITY = 1e-18
DEFAULT_BIAS_PROCESS_DENSITY = 1e-18

# Default initial estimator uncertainty: 3 m position, 100 us offset, 10 ppm bias.
DEFAULT_PRIOR_SIGMA_POS = 3.0
DEFAULT_PRIOR_SIGMA_OFFSET = 1e-4
DEFAULT_PRIOR_SIGMA_BIAS = 1e-5

# Default epoch rate (exchanges per second per edge).
DEFAULT_RATE_HZ = 2.0

# Extra per-epoch position process noise (m) applied to nodes flagged mobile.
DEFAULT_MOBILE_POSITION_STD = 0.5

MEASUREMENT_ROW_ORDER = ("d", "r", "R")
