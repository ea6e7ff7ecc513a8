"""dualbeam: dual MVDR beamforming with a recurrent spectral postfilter.

Simulates reverberant multichannel scenes, runs complementary target and
interference beamformers, and trains a GRU/LSTM mask estimator that consumes
both outputs. Everything numerical is numpy; the recurrent kernels optionally
run under numba (see dualbeam.backend).
"""

__version__ = "0.1.0"
