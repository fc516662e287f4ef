"""Regenerate the committed .msh files from the .geo sources (requires the gmsh Python module)."""
import os
import re
import tempfile

import gmsh

JOBS = [
    ("unit_square.geo", 1.0 / 27.0, 2.2, "unit_square_h27.msh"),
    ("offset_cylinders.geo", 0.05, 2.2, "offset_cylinders_lc0.05.msh"),
    ("offset_cylinders.geo", 0.01, 4.1, "offset_cylinders_lc0.01.msh"),
    ("square_pm1.geo", 0.1, 4.1, "square_pm1_lc0.1.msh"),
    ("square_pm1.geo", 0.05, 4.1, "square_pm1_lc0.05.msh"),
]

for geo, lc, version, out in JOBS:
    gmsh.initialize()
    gmsh.option.setNumber("General.Terminal", 0)
    src = open(geo).read()
    src = re.sub(r"If\(!Exists\(lc\)\).*EndIf", "lc = %.17g;" % lc, src)
    tmp = os.path.join(tempfile.mkdtemp(), geo)
    with open(tmp, "w") as fh:
        fh.write(src)
    gmsh.open(tmp)
    gmsh.option.setNumber("Mesh.MshFileVersion", version)
    gmsh.option.setNumber("Mesh.RandomSeed", 1)
    gmsh.model.mesh.generate(2)
    gmsh.write(out)
    gmsh.finalize()
    print("wrote", out)
