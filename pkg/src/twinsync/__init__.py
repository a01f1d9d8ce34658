"""Digital-twin synchronization: adaptive sampling, lossy uplink, predictive reconstruction.

A KC-TD3 agent picks the segment length ``W`` and sample count ``n`` for each
segment, minimising transmitted samples under an average prediction-error
constraint.
"""

__version__ = "0.1.0"
