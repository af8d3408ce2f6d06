"""Regenerate the shipped scenario configs (april25.toml, july13.toml).

The field-fitted nonparametric distributions (desired drop-off location,
dwell times, crosswalk phases) were never published. Each stand-in here is a
lognormal shape represented by its quantiles at (i + 0.5) / n, rounded to
0.1. Means and spreads are calibration knobs; edit STANDINS and rerun
from this directory.
"""
import math
import sys

from scipy.stats import lognorm

N = 41

# name: (mean, coefficient of variation, lower clip, upper clip)
STANDINS = {
    "april25": {
        "desired_location": (112.0, 0.22, 20.0, 200.0),
        "dwell_lead": (40.0, 0.40, 5.0, 200.0),
        "dwell_other": (20.0, 0.50, 1.0, 200.0),
        "red_duration": (15.0, 0.50, 2.0, 120.0),
        "green_duration": (45.0, 0.60, 3.0, 300.0),
    },
    "july13": {
        "desired_location": (110.0, 0.22, 20.0, 200.0),
        "dwell_lead": (42.0, 0.40, 5.0, 200.0),
        "dwell_other": (21.0, 0.50, 1.0, 200.0),
        "red_duration": (15.0, 0.50, 2.0, 120.0),
        "green_duration": (45.0, 0.60, 3.0, 300.0),
    },
}


def quantiles(mean, cv, lo, hi):
    s2 = math.log(1.0 + cv * cv)
    dist = lognorm(s=math.sqrt(s2), scale=mean * math.exp(-s2 / 2.0))
    return [round(float(min(hi, max(lo, dist.ppf((i + 0.5) / N)))), 1) for i in range(N)]



# Field estimates per day (car-following, drop-off proportion, batching,
# patience partition and mixture parameters).
DAYS = {
    "april25": {
        "title": "April 25",
        "boundaries": [54.5, 91.0, 119.5, 169.0],
        "speeds": [6.13, 4.94, 3.30, 6.07],
        "tail": 5.72,
        "a_max": 2.12,
        "d_max": 2.86,
        "entry_speed": 4.54,
        "dropoff_proportion": 0.83,
        "primary": (122.4, 66.5, 120.0, 42.3),
        "secondary": (70.2, 15.4, 14.5, 12.3),
        # gamma, k1, theta1, k2, theta2
        "first": [
            (0.43, 2.13, 1.42, 3.62, 8.77),
            (0.48, 1.81, 1.25, 3.63, 7.29),
            (0.55, 0.97, 6.80, 5.71, 4.78),
            (0.64, 1.10, 2.15, 6.25, 3.17),
        ],
        "later": (0.49, 3.48, 0.70, 3.75, 8.72),
    },
    "july13": {
        "title": "July 13",
        "boundaries": [38.0, 74.3, 109.8, 167.0],
        "speeds": [5.91, 5.11, 4.20, 5.89],
        "tail": 5.82,
        "a_max": 2.39,
        "d_max": 2.37,
        "entry_speed": 4.48,
        "dropoff_proportion": 0.85,
        "primary": (199.4, 72.2, 93.5, 53.4),
        "secondary": (70.4, 27.7, 16.9, 18.3),
        "first": [
            (0.25, 17.09, 0.17, 2.71, 14.74),
            (0.40, 14.67, 0.16, 1.84, 14.57),
            (0.36, 3.92, 1.05, 4.44, 7.23),
            (0.56, 6.27, 0.47, 5.93, 4.58),
        ],
        "later": (0.31, 20.02, 0.13, 1.70, 13.01),
    },
}

# Fixed preparation + post-drop-off time added to non-lead dwells (stand-in).
OTHER_OFFSET = {"april25": 10.0, "july13": 10.0}


def fmt(xs):
    return "[" + ", ".join(repr(float(x)) for x in xs) + "]"


def mixture(m):
    g, k1, t1, k2, t2 = m
    return f"{{ gamma = {g}, k1 = {k1}, theta1 = {t1}, k2 = {k2}, theta2 = {t2} }}"


def render(day):
    d = DAYS[day]
    st = {name: quantiles(*p) for name, p in STANDINS[day].items()}
    firsts = ",\n".join("    " + mixture(m) for m in d["first"])
    p, s = d["primary"], d["secondary"]
    return f"""# {d['title']} parameter set.
#
# Lane, car-following, drop-off proportion, batching and patience values
# are the field estimates for this day. The sample lists marked STAND-IN
# replace field-fitted nonparametric distributions that were never
# published; they are generated by configs/make_standins.py and are
# calibration knobs, not field data.

schema_version = 1
name = "{day}"
demand_rate = 400.0
warmup = 600.0
horizon = 3600.0
dt = 0.1
seed = 1

[lane]
length = 240.0
segment_boundaries = {fmt(d['boundaries'])}
cruise_speed_per_segment = {fmt(d['speeds'])}
cruise_speed_tail = {d['tail']}
jam_spacing = 7.5
reaction_time = 1.0
crosswalk_position = 120.0
entry_speed = {d['entry_speed']}
entry_headway = 2.0
max_acceleration = {d['a_max']}
max_deceleration = {d['d_max']}

[behavior]
dropoff_proportion = {d['dropoff_proportion']}
lead_sensing_range = 60.0

# STAND-IN: desired drop-off location (m)
[behavior.desired_location]
samples = {fmt(st['desired_location'])}

# STAND-IN: lead-taxi dwell (s)
[behavior.dwell_lead]
samples = {fmt(st['dwell_lead'])}

# STAND-IN: non-lead door-open to door-close (s); offset = fixed
# preparation plus post-drop-off time
[behavior.dwell_other]
samples = {fmt(st['dwell_other'])}
offset = {OTHER_OFFSET[day]}

[behavior.patience]
segment_boundaries = {fmt(d['boundaries'][:3])}
first_instance = [
{firsts},
]
later_instances = {mixture(d['later'])}

[crosswalk]
enabled = true

# STAND-IN: red phase (s)
[crosswalk.red_duration]
samples = {fmt(st['red_duration'])}

# STAND-IN: green phase (s)
[crosswalk.green_duration]
samples = {fmt(st['green_duration'])}

[policy]
kind = "batching"
primary = {{ l_m1 = {p[0]}, l_m2 = {p[1]}, t_m = {p[2]}, l_left = {p[3]} }}
secondary = {{ l_m1 = {s[0]}, l_m2 = {s[1]}, t_m = {s[2]}, l_left = {s[3]} }}
"""


def main(argv):
    days = argv or list(DAYS)
    for day in days:
        with open(f"{day}.toml", "w") as f:
            f.write(render(day))
        print(f"wrote {day}.toml")


if __name__ == "__main__":
    main(sys.argv[1:])
