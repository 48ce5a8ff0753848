"""Human-in-the-loop topology optimization with a learned co-pilot.

Core pieces:

- plane-stress FEA and compliance sensitivities (:mod:`hitop.fea`)
- density-filter / projection / MMA optimization loop (:mod:`hitop.optimize`)
- binary-image skeletonization to member graphs (:mod:`hitop.skeleton`)
- synthetic preference corpus factory (:mod:`hitop.dataset`)
- U-Net preference predictor (:mod:`hitop.segnet`)
- ellipse recommendation pipeline (:mod:`hitop.copilot`)
- session service and CLI (:mod:`hitop.service`, :mod:`hitop.cli`)

Hot numeric kernels are numba-compiled by default; set ``HITOP_NO_NUMBA=1``
to force the pure-numpy fallbacks (see :mod:`hitop.accel`).
"""

__version__ = "0.1.0"
