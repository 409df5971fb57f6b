from .shapes import ShapePrimitive, RigidBody, ContactPoint, box_inertia, sphere_inertia, capsule_inertia
from .world import World, SimParams, detect_contacts, resolve_contact_forces, net_force_on_shape

__all__ = [
    "ShapePrimitive",
    "RigidBody",
    "ContactPoint",
    "World",
    "SimParams",
    "detect_contacts",
    "resolve_contact_forces",
    "net_force_on_shape",
    "box_inertia",
    "sphere_inertia",
    "capsule_inertia",
]
