"""Certified reduced-basis + adaptive anchored-ANOVA moments for the
stochastic Stokes-Brinkman problem on 2D quadrilateral meshes."""

__version__ = "0.1.0"
