"""Dirac structures, integrable systems, Liouville tori and action-angle coordinates.

The expression core, exterior calculus, Courant-bracket checks, torus machinery
and action computations are all numerical-symbolic hybrids: fields are exact
expression trees, and every geometric statement is checked at sample points
against a stated tolerance.
"""

from .action import (ActionSetup, action_by_mineur, action_by_path_integral, action_dependence_rank,
                     beta_form, coaffine_transition, verify_full_aa, verify_partial_aa,
                     verify_torus_isotropy)
from .dirac import (DiracField, Section, canonical_dirac, courant_bracket, courant_closedness,
                    from_frame, from_poisson, from_presymplectic, induced_dirac_on_level,
                    isotropy_check)
from .expr import Chart, parse
from .fields import BivectorField, KForm, VectorField
from .scenario import Scenario, load_scenario
from .system import IntegrableSystem, bind_hamiltonians, check_integrability
from .torus import TorusChart, TorusTools, torus_average

__version__ = "0.1.0"
