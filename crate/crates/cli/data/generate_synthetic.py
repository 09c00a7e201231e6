"""Regenerates synthetic_schools.tsv: a county/district/school/year binomial
hierarchy drawn from the logistic-Gaussian model with fixed seed 20140101."""
import math
import random

rng = random.Random(20140101)
rows = []


def child(theta, var):
    return theta + rng.gauss(0.0, math.sqrt(var))


root = -0.2
root_var = 0.15
for c in range(3):
    county = f"C{c + 1}"
    th_c = child(root, root_var)
    var_c = rng.expovariate(1.0) * 0.3
    districts = [f"{c + 1}{d + 1:02d}" for d in range(rng.randint(3, 4))]
    if c == 0:
        districts.append("75")
    for district in districts:
        th_d = child(th_c, var_c)
        var_d = rng.expovariate(1.0) * 0.3
        for s in range(rng.randint(3, 5)):
            school = f"{district}S{s + 1}"
            th_s = child(th_d, var_d)
            var_s = rng.expovariate(1.0) * 0.2
            years = [2007, 2008, 2009] if rng.random() < 0.8 else [2008, 2009]
            if rng.random() < 0.15:
                years.append(2010)
            for year in years:
                th_y = child(th_s, var_s)
                trials = rng.randint(30, 110)
                p = 1.0 / (1.0 + math.exp(-th_y))
                successes = sum(rng.random() < p for _ in range(trials))
                rows.append((county, district, school, year, trials, successes))

with open("synthetic_schools.tsv", "w") as f:
    f.write("county\tdistrict\tschool\tyear\ttrials\tsuccesses\n")
    for r in rows:
        f.write("\t".join(str(x) for x in r) + "\n")
