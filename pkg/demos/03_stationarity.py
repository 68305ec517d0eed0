"""
Certifying stationarity
=======================

At the end of the penalty path the multipliers are recovered and the
C-stationarity system is checked residual by residual.  Where the obstacle
is active but no node is biactive, strong stationarity and B-stationarity
(sampled over tangent directions) agree; moving the control breaks both.
"""

import numpy as np

from obstacle_ocp import (check_b_stationarity, check_c_stationarity,
                          check_strong_stationarity, path_follow, recover_multipliers)
from obstacle_ocp.scenarios import s1, s2
from obstacle_ocp.stationarity import active_sets, normal_cone_certificate, normal_cone_vector

# state bound active, obstacle inactive
problem, schedule = s1(32)
point = recover_multipliers(problem, iterate=path_follow(problem, schedule).final)
print(check_c_stationarity(point).to_table())

# the multiplier of the state bound is a normal vector to the feasible set
tau = normal_cone_vector(problem, point.nu, point.mu)
print(normal_cone_certificate(problem, point.u, tau).to_table())

# obstacle strictly active on a patch, state bound never reached
problem, schedule = s2(16)
point = recover_multipliers(problem, iterate=path_follow(problem, schedule).final)
sets = active_sets(problem, point.y, point.xi)
print(f"strictly active {sets.omega_s.size}, biactive {sets.biactive.size}, "
      f"state bound active {sets.omega_b.size}")
print(check_strong_stationarity(point).to_table())
b = check_b_stationarity(problem, point.u, n_random=500)
print(f"B check: min directional derivative {b.min_value:.2e} over {b.admitted} directions")

# push the control up at one free node
u = point.u.copy()
free = np.setdiff1d(np.arange(u.size), sets.omega_a)
u[free[len(free) // 2]] += 0.1
moved = recover_multipliers(problem, u=u)
print("perturbed: strong", check_strong_stationarity(moved).passed,
      "| failures", check_strong_stationarity(moved).failures())
print(f"perturbed: B min {check_b_stationarity(problem, u).min_value:.2e}")
