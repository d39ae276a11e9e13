"""deskgrasp: 6-DOF parallel-jaw grasp proposal at desk scale.

Learned contact-point sampling with differentiable soft projection, grasp
regression and classification heads trained under one joint objective, a
procedural shape generator with an analytic grasp oracle, and the rule-based
ranked evaluation protocol.
"""

__version__ = "0.1.0"
