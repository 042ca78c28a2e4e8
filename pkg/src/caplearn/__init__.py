"""Safe footstep-policy learning on a perturbed linear inverted pendulum."""

__version__ = "0.1.0"
