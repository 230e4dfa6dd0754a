"""Procedural fixture meshes shared by the test suite."""

import numpy as np

from anisoforge.mesh import SurfaceMesh


def tetrahedron():
    v = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return SurfaceMesh(v, f)


def icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return SurfaceMesh(v, f)


def icosphere(subdiv=3, radius=1.0):
    """Subdivided icosahedron projected on the sphere (10*4^k + 2 vertices)."""
    mesh = icosahedron()
    verts = [tuple(p) for p in mesh.vertices]
    faces = [tuple(f) for f in mesh.faces]
    for _ in range(subdiv):
        cache = {}
        idx = {p: i for i, p in enumerate(verts)}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key in cache:
                return cache[key]
            p = np.array(verts[i]) + np.array(verts[j])
            p /= np.linalg.norm(p)
            verts.append(tuple(p))
            cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
        del idx
    v = np.array(verts) * radius
    return SurfaceMesh(v, np.array(faces))


def torus(nu=48, nv=24, R=1.0, r=1.0 / 3.0):
    """Torus grid: u around the main axis, v around the tube."""
    us = np.arange(nu) * (2 * np.pi / nu)
    vs = np.arange(nv) * (2 * np.pi / nv)
    verts = np.zeros((nu * nv, 3))
    for i, u in enumerate(us):
        for j, v in enumerate(vs):
            w = R + r * np.cos(v)
            verts[i * nv + j] = [w * np.cos(u), w * np.sin(u), r * np.sin(v)]
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [(a, b, c), (a, c, d)]
    return SurfaceMesh(verts, np.array(faces))


def plane_grid(n=10, size=1.0):
    """Flat triangulated square in the z=0 plane."""
    xs = np.linspace(-size, size, n + 1)
    verts = np.array([[x, y, 0.0] for y in xs for x in xs])
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = a + n + 2
            d = a + n + 1
            faces += [(a, b, c), (a, c, d)]
    return SurfaceMesh(verts, np.array(faces))


def cube_grid(n=8, half=1.0):
    """Closed cube with each face an n x n triangle grid, welded and outward."""
    vert_map = {}
    verts = []

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in vert_map:
            vert_map[key] = len(verts)
            verts.append(np.asarray(p, dtype=np.float64))
        return vert_map[key]

    faces = []
    # each cube face: origin o, spanning vectors du, dv (right-handed with
    # the outward normal du x dv)
    h = half
    sides = [
        (np.array([-h, -h, h]), np.array([2 * h, 0, 0]), np.array([0, 2 * h, 0])),   # +z
        (np.array([-h, h, -h]), np.array([2 * h, 0, 0]), np.array([0, -2 * h, 0])),  # -z
        (np.array([-h, h, -h]), np.array([0, -2 * h, 0]), np.array([0, 0, 2 * h])),  # -x
        (np.array([h, -h, -h]), np.array([0, 2 * h, 0]), np.array([0, 0, 2 * h])),   # +x
        (np.array([-h, -h, -h]), np.array([2 * h, 0, 0]), np.array([0, 0, 2 * h])),  # -y
        (np.array([h, h, -h]), np.array([-2 * h, 0, 0]), np.array([0, 0, 2 * h])),   # +y
    ]
    for o, du, dv in sides:
        grid = [
            [vid(o + du * (i / n) + dv * (j / n)) for i in range(n + 1)]
            for j in range(n + 1)
        ]
        for j in range(n):
            for i in range(n):
                a, b = grid[j][i], grid[j][i + 1]
                c, d = grid[j + 1][i + 1], grid[j + 1][i]
                faces += [(a, b, c), (a, c, d)]
    return SurfaceMesh(np.array(verts), np.array(faces))


def vertex_fan(ratio_center=10.0, n=6):
    """Flat fan: one center vertex ringed by n others (smoothing fixture)."""
    angles = np.arange(n) * (2 * np.pi / n)
    verts = np.vstack(
        [[0.0, 0.0, 0.0], np.stack([np.cos(angles), np.sin(angles), 0 * angles], axis=1)]
    )
    faces = np.array([(0, 1 + i, 1 + (i + 1) % n) for i in range(n)])
    return SurfaceMesh(verts, faces), ratio_center
