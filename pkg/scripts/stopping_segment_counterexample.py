"""Three directions in R^3 for which the first stopping segment closed at
nu has span(V) != span(Phi) and dependent directions. The span-closing rule
waits for y to enter the span of the directions used and its segments meet
the determinant contraction bound."""
import numpy as np

from adaptsolve import diagnostics as D
from adaptsolve.errors import DiagnosticsViolation


def main():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    y0 = np.array([1.0, 1.0, 1.0])
    path = [a, b, a]
    y = y0.copy()
    for w in path:
        y = y - w * (w @ y)
        print("y =", np.round(y, 6), " ||y||^2 =", round(float(y @ y), 6))
    try:
        D.stopping_times_from_path(path, y0)
    except DiagnosticsViolation as exc:
        print("nu rule:", exc)
    rep = D.stopping_times_from_path(path, y0, check=False)
    s = rep.segments[0]
    print(f"nu rule, unchecked: ratio {s.ratio_observed:.4f} vs gamma {s.gamma:.4f}, "
          f"span_equal={s.span_equal}, independent={s.independent}")
    c = np.array([0.0, 0.0, 1.0])
    rep = D.stopping_times_from_path(path + [c], y0, rule="span")
    s = rep.segments[0]
    print(f"span rule: tau {rep.taus}, ratio {s.ratio_observed:.4f} vs gamma {s.gamma:.4f}, ok={s.contraction_ok}")


if __name__ == "__main__":
    main()
