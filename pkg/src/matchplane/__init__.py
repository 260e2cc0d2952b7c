"""Software replica of a line-speed NN-driven traffic analysis data plane.

Subsystems:

* ``ternary``   -- argmax as a single priority ternary match (TCAM style)
* ``rnn``       -- binarized RNN layer semantics and exact lookup-table compilation
* ``bundle``    -- portable model bundle (tables + weights + thresholds) file format
* ``window``    -- per-flow sliding-window state machine (counters, ring, CPR)
* ``flows``     -- hash-indexed flow slots with timeout/collision semantics
* ``fallback``  -- per-packet decision-forest classifier
* ``escalate``  -- confidence records and threshold calibration
* ``imis``      -- discrete-event replica of the off-switch inference pipeline
* ``trace``     -- packet traces: synthesis, flow splitting, load replay, file IO
* ``engine``    -- the integrated per-packet analysis driver and metrics
* ``resources`` -- table/state resource estimation
* ``oracles``   -- independent reference implementations used for verification
"""

from . import (  # noqa: F401
    bundle,
    engine,
    escalate,
    fallback,
    flows,
    imis,
    oracles,
    resources,
    rnn,
    ternary,
    trace,
    window,
)

__version__ = "0.1.0"
