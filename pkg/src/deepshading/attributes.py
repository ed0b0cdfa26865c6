"""Names and widths of deferred-shading attributes.

Colour attributes carry one value per RGB channel.  A mono network sees a
single channel of each colour attribute at a time and is run once per
colour; an RGB network sees all three.
"""

# name -> (channels, is_colour)
ATTRIBUTES = {
    "P_s": (3, False),       # camera-space position
    "N_s": (3, False),       # camera-space normal
    "N_w": (3, False),       # world-space normal
    "D_s": (1, False),       # depth, equal to P_s.z
    "D_focal": (1, False),   # signed distance to the focal plane
    "C_w": (3, False),       # direction to the camera
    "C_alpha": (1, False),   # angle between C_w and the normal
    "R_diff": (3, True),     # diffuse albedo
    "R_spec": (3, True),
    "R_gloss": (1, False),
    "R_scatt": (3, True),
    "L": (3, True),          # direct light
    "L_diff": (3, True),     # diffuse-only direct light
    "F": (2, False),         # screen-space motion, polar
    "coverage": (1, False),
}

# Attributes the procedural generator actually renders.
GENERATED = ("P_s", "N_s", "N_w", "D_s", "D_focal", "R_diff", "L", "coverage")

MONO = "mono"
RGB = "rgb"


def width(name: str, mode: str = RGB) -> int:
    try:
        channels, colour = ATTRIBUTES[name]
    except KeyError:
        raise ValueError(f"unknown attribute {name!r}") from None
    return 1 if (colour and mode == MONO) else channels


def input_channels(names, mode: str = RGB) -> int:
    return sum(width(n, mode) for n in names)


def has_colour(names) -> bool:
    return any(ATTRIBUTES[n][1] for n in names)
