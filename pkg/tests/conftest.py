import numpy as np
import pytest

from augpd import (
    Affine,
    ConsensusProblem,
    CouplingProblem,
    Exponential,
    Graph,
    NegLog,
    Quadratic,
    incidence_matrix,
)

# Optimum of (t-0.5)^2 + e^{-0.5 t} - log t, frozen from a high-precision
# bisection on the summed gradient (independent of the package solvers).
THREE_NODE_OPT = 1.0991807754952995


@pytest.fixture(scope="session")
def triangle_graph():
    return Graph(
        ("nu1", "nu2", "nu3"),
        (("nu1", "nu2"), ("nu1", "nu3"), ("nu2", "nu3")),
    )


@pytest.fixture(scope="session")
def three_node_problem(triangle_graph):
    return ConsensusProblem(
        (Quadratic(center=0.5), Exponential(rate=-0.5), NegLog()),
        incidence_matrix(triangle_graph),
    )


@pytest.fixture(scope="session")
def three_node_constrained(triangle_graph):
    return ConsensusProblem(
        (Quadratic(center=0.5), Exponential(rate=-0.5), NegLog()),
        incidence_matrix(triangle_graph),
        (Affine(1.0, -1.0), None, None),
    )


@pytest.fixture(scope="session")
def path4_graph():
    return Graph(
        ("n1", "n2", "n3", "n4"),
        (("n1", "n2"), ("n2", "n3"), ("n3", "n4")),
    )


@pytest.fixture(scope="session")
def tree_problem(path4_graph):
    return ConsensusProblem(
        tuple(Quadratic(center=c) for c in (0.0, 1.0, 2.0, 3.0)),
        incidence_matrix(path4_graph),
    )


@pytest.fixture(scope="session")
def one_link_problem():
    return CouplingProblem(
        (Quadratic(center=2.0), Quadratic(center=2.0)),
        np.array([[1.0, 1.0]]),
        (Affine(1.0, -1.0),),
    )
