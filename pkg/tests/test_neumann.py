import unittest

import numpy as np

from src.utils import neumann
from src.utils.errors import DomainError
from src.utils.geometry import Ball, Box, Radial, WholeSpace
from src.utils.rng import make_stream

STEP = 1e-5


def families():
    yield Ball([0.0, 0.0], 1.0), None
    yield Ball([0.5, -0.2, 0.1], 0.8), None
    yield Box([0.0, 0.0], [1.0, 2.0]), None
    yield Box([-1.0], [1.0]), None
    yield WholeSpace(2), Box([-3.0, -3.0], [3.0, 3.0])


def interior_points(dom, window, count=40):
    region = window if window is not None else dom
    return region.sample_uniform(count, make_stream(17, 0))


class TestNeumannFamilies(unittest.TestCase):
    def test_normal_derivative_vanishes(self):
        for dom, window in families():
            for fn in neumann.test_functions(dom, window):
                with self.subTest(domain=dom.kind, function=fn.name):
                    self.assertLess(neumann.normal_derivative_residual(fn, dom), 1e-8)

    def test_checked_family_is_not_empty(self):
        for dom, window in families():
            self.assertGreaterEqual(len(neumann.checked_test_functions(dom, window)), 3)

    def test_gradient_matches_finite_differences(self):
        for dom, window in families():
            x = interior_points(dom, window)
            d = x.shape[1]
            for fn in neumann.test_functions(dom, window):
                grad = fn.gradient(x)
                for k in range(d):
                    e = np.zeros(d)
                    e[k] = STEP
                    fd = (fn.f(x + e) - fn.f(x - e)) / (2 * STEP)
                    with self.subTest(domain=dom.kind, function=fn.name, axis=k):
                        np.testing.assert_allclose(grad[:, k], fd, atol=1e-6)

    def test_hessian_matches_gradient_differences(self):
        for dom, window in families():
            x = interior_points(dom, window)
            d = x.shape[1]
            for fn in neumann.test_functions(dom, window):
                hess = fn.hessian(x)
                for k in range(d):
                    e = np.zeros(d)
                    e[k] = STEP
                    fd = (fn.gradient(x + e) - fn.gradient(x - e)) / (2 * STEP)
                    with self.subTest(domain=dom.kind, function=fn.name, axis=k):
                        np.testing.assert_allclose(hess[:, :, k], fd, atol=1e-5)

    def test_laplacian_is_trace_of_hessian(self):
        for dom, window in families():
            x = interior_points(dom, window)
            for fn in neumann.test_functions(dom, window):
                trace = np.trace(fn.hessian(x), axis1=1, axis2=2)
                np.testing.assert_allclose(fn.laplacian(x), trace, atol=1e-10)

    def test_hessian_bound_holds(self):
        for dom, window in families():
            x = interior_points(dom, window, 200)
            for fn in neumann.test_functions(dom, window):
                norms = np.linalg.norm(fn.hessian(x), ord=2, axis=(1, 2))
                self.assertLessEqual(float(np.max(norms)), fn.hessian_bound * (1 + 1e-12), fn.name)

    def test_ball_family_has_a_non_radial_mode(self):
        names = [fn.name for fn in neumann.test_functions(Ball([0.0, 0.0], 1.0))]
        self.assertEqual(names, ["ball-quartic", "ball-tilted", "ball-saddle"])
        # the saddle needs two coordinates
        self.assertEqual(len(neumann.test_functions(Ball([0.0], 1.0))), 2)
        saddle = neumann.test_functions(Ball([0.0, 0.0], 2.0))[2]
        np.testing.assert_allclose(saddle([[1.0, 0.0], [0.0, 1.0]]), [0.875, -0.875])

    def test_radial_domain_has_no_family(self):
        with self.assertRaises(DomainError):
            neumann.test_functions(Radial([0.0, 0.0], 1.0, [0.0, 0.1]))

    def test_call_accepts_single_point(self):
        fn = neumann.test_functions(WholeSpace(2))[0]
        np.testing.assert_allclose(fn([1.0, 2.0]), [5.0])


if __name__ == "__main__":
    unittest.main()
