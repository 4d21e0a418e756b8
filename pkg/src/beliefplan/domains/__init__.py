from .base import DomainSpec
from .hand_eye import HandEyeParams, make_hand_eye
from .lqg import make_lqg_test, make_lqr_mdp
from .planar_nav import PlanarNavParams, make_planar_nav, room_constraint

__all__ = [
    "DomainSpec",
    "HandEyeParams",
    "PlanarNavParams",
    "make_hand_eye",
    "make_lqg_test",
    "make_lqr_mdp",
    "make_planar_nav",
    "room_constraint",
]
