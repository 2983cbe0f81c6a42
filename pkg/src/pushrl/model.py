"""Physical model parameters and their flat key=value file format.

All quantities are SI.  The three fingers share link geometry and masses;
only the base poses differ.  ``pack()`` lowers a ModelParams into the flat
float vector consumed by the simulation kernels (see _kernel_py for the
layout).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

# Kernel parameter-vector layout: 9 scalars, then 7 per finger.
PVEC_SCALARS = 9
PVEC_PER_FINGER = 7
PVEC_SIZE = PVEC_SCALARS + 3 * PVEC_PER_FINGER


def _default_bases() -> tuple[tuple[float, float, float], ...]:
    # 120 degrees apart on a 0.2 m circle, each oriented toward the origin.
    out = []
    for k in range(3):
        ang = 2.0 * np.pi * k / 3.0
        x = 0.2 * np.cos(ang)
        y = 0.2 * np.sin(ang)
        th = np.arctan2(-y, -x)
        out.append((float(x), float(y), float(th)))
    return tuple(out)


@dataclass(frozen=True)
class ModelParams:
    object_mass: float = 0.34
    object_radius: float = 0.055
    ground_coulomb_decel: float = 0.5
    ground_viscous: float = 1.0
    contact_stiffness: float = 2000.0
    contact_damping: float = 20.0
    contact_friction_mu: float = 0.8
    fingertip_radius: float = 0.01
    joint_damping: float = 0.05
    link_lengths: tuple[float, float] = (0.13, 0.13)
    link_masses: tuple[float, float] = (0.3, 0.3)
    base_poses: tuple[tuple[float, float, float], ...] = field(
        default_factory=_default_bases
    )

    def validate(self) -> None:
        if not (self.object_mass > 0):
            raise ConfigError("object_mass must be positive")
        if not (self.object_radius > 0):
            raise ConfigError("object_radius must be positive")
        if not (self.contact_stiffness > 0):
            raise ConfigError("contact_stiffness must be positive")
        if self.contact_friction_mu < 0:
            raise ConfigError("contact_friction_mu must be nonnegative")
        if any(l <= 0 for l in self.link_lengths):
            raise ConfigError("link_lengths must be positive")
        if len(self.base_poses) != 3:
            raise ConfigError("exactly three finger bases required")
        for i in range(3):
            for j in range(i + 1, 3):
                bi, bj = self.base_poses[i], self.base_poses[j]
                if bi[0] == bj[0] and bi[1] == bj[1]:
                    raise ConfigError(f"base poses {i} and {j} coincide")

    def joint_inertias(self) -> tuple[float, float]:
        """Lumped diagonal inertias seen by the two joints of one finger.

        Links are treated as point masses at their centers; the shoulder
        additionally carries the distal link at full proximal extension.
        """
        l1, l2 = self.link_lengths
        m1, m2 = self.link_masses
        i1 = m1 * (0.5 * l1) ** 2 + m2 * (l1 + 0.5 * l2) ** 2
        i2 = m2 * (0.5 * l2) ** 2
        return i1, i2

    def pack(self) -> np.ndarray:
        """Flat float64 vector for the simulation kernels."""
        self.validate()
        v = np.empty(PVEC_SIZE, dtype=np.float64)
        v[0] = self.object_mass
        v[1] = self.object_radius
        v[2] = self.ground_coulomb_decel
        v[3] = self.ground_viscous
        v[4] = self.contact_stiffness
        v[5] = self.contact_damping
        v[6] = self.contact_friction_mu
        v[7] = self.fingertip_radius
        v[8] = self.joint_damping
        i1, i2 = self.joint_inertias()
        for f in range(3):
            o = PVEC_SCALARS + PVEC_PER_FINGER * f
            bx, by, bth = self.base_poses[f]
            v[o + 0] = bx
            v[o + 1] = by
            v[o + 2] = bth
            v[o + 3] = self.link_lengths[0]
            v[o + 4] = self.link_lengths[1]
            v[o + 5] = i1
            v[o + 6] = i2
        return v


# Scalar keys of the flat file format, in canonical order.
_SCALAR_KEYS = (
    "object_mass",
    "object_radius",
    "ground_coulomb_decel",
    "ground_viscous",
    "contact_stiffness",
    "contact_damping",
    "contact_friction_mu",
    "fingertip_radius",
    "joint_damping",
)
_PAIR_KEYS = ("link_lengths", "link_masses")


def params_to_dict(p: ModelParams) -> dict[str, float]:
    d: dict[str, float] = {}
    for k in _SCALAR_KEYS:
        d[k] = float(getattr(p, k))
    d["link_length_1"], d["link_length_2"] = map(float, p.link_lengths)
    d["link_mass_1"], d["link_mass_2"] = map(float, p.link_masses)
    for f in range(3):
        bx, by, bth = p.base_poses[f]
        d[f"base_{f}_x"] = float(bx)
        d[f"base_{f}_y"] = float(by)
        d[f"base_{f}_theta"] = float(bth)
    return d


def params_from_dict(d: dict[str, float], base: ModelParams | None = None) -> ModelParams:
    """Build ModelParams from key=value entries; missing keys fall back to `base`."""
    p = base if base is not None else ModelParams()
    kw: dict = {}
    for k in _SCALAR_KEYS:
        if k in d:
            kw[k] = float(d[k])
    if "link_length_1" in d or "link_length_2" in d:
        kw["link_lengths"] = (
            float(d.get("link_length_1", p.link_lengths[0])),
            float(d.get("link_length_2", p.link_lengths[1])),
        )
    if "link_mass_1" in d or "link_mass_2" in d:
        kw["link_masses"] = (
            float(d.get("link_mass_1", p.link_masses[0])),
            float(d.get("link_mass_2", p.link_masses[1])),
        )
    if any(f"base_{f}_{c}" in d for f in range(3) for c in ("x", "y", "theta")):
        bases = []
        for f in range(3):
            bx, by, bth = p.base_poses[f]
            bases.append(
                (
                    float(d.get(f"base_{f}_x", bx)),
                    float(d.get(f"base_{f}_y", by)),
                    float(d.get(f"base_{f}_theta", bth)),
                )
            )
        kw["base_poses"] = tuple(bases)
    out = replace(p, **kw)
    out.validate()
    return out


def save_params(p: ModelParams, path: str) -> None:
    """Write the flat `key = value` file (one key per line, SI units)."""
    d = params_to_dict(p)
    with open(path, "w") as fh:
        for k, v in d.items():
            fh.write(f"{k} = {v!r}\n")


def load_params(path: str, base: ModelParams | None = None) -> ModelParams:
    d: dict[str, float] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            k, _, v = line.partition("=")
            try:
                d[k.strip()] = float(v.strip())
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad float {v.strip()!r}") from e
    return params_from_dict(d, base=base)
