#!/usr/bin/env python3
"""Write a 500-row synthetic file in the UCI Adult `adult.data` column layout.

The marginals are set to roughly match the complete-case Adult data
(~67% male, ~86% white, ~46% married, ~25% earning >50K) with income
depending on marital status, sex, age and education. A handful of rows
carry '?' markers so the missing-value filter is exercised.
"""
import math
import random
import sys

N_ROWS = 500
SEED = 20200101

WORKCLASS = ["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov",
             "Local-gov", "State-gov"]
EDUCATION = [("HS-grad", 9), ("Some-college", 10), ("Bachelors", 13),
             ("Masters", 14), ("Assoc-voc", 11), ("11th", 7), ("Doctorate", 16)]
OCCUPATION = ["Prof-specialty", "Craft-repair", "Exec-managerial", "Adm-clerical",
              "Sales", "Other-service", "Machine-op-inspct", "Transport-moving"]
RACES = [("White", 0.86), ("Black", 0.094), ("Asian-Pac-Islander", 0.029),
         ("Amer-Indian-Eskimo", 0.01), ("Other", 0.007)]
SINGLE = [("Never-married", 0.58), ("Divorced", 0.25), ("Separated", 0.06),
          ("Widowed", 0.05), ("Married-spouse-absent", 0.06)]


def pick(rng, weighted):
    u = rng.random()
    acc = 0.0
    for value, w in weighted:
        acc += w
        if u < acc:
            return value
    return weighted[-1][0]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def main(out):
    rng = random.Random(SEED)
    rows = []
    for i in range(N_ROWS):
        male = rng.random() < 0.675
        age = int(min(90, 17 + rng.gammavariate(2.2, 9.5)))
        married = rng.random() < sigmoid(-2.9 + 0.07 * age + (0.9 if male else -1.0))
        marital = "Married-civ-spouse" if married else pick(rng, SINGLE)
        race = pick(rng, RACES)
        edu, edu_num = EDUCATION[min(len(EDUCATION) - 1, int(rng.expovariate(0.9)))]
        relationship = ("Husband" if male else "Wife") if married else rng.choice(
            ["Not-in-family", "Own-child", "Unmarried"])
        logit = -3.2 + 2.1 * married + 0.45 * male + 0.25 * (edu_num - 9) + 0.02 * (age - 38)
        rich = rng.random() < sigmoid(logit)
        hours = max(1, min(99, int(rng.gauss(42 if male else 36, 11))))
        gain = rng.choice([0] * 11 + [2174, 5178, 7688, 15024]) if rich else rng.choice([0] * 25 + [2174])
        row = [str(age), rng.choice(WORKCLASS), str(rng.randint(20000, 500000)), edu, str(edu_num),
               marital, rng.choice(OCCUPATION), relationship, race,
               "Male" if male else "Female", str(gain), "0", str(hours), "United-States",
               ">50K" if rich else "<=50K"]
        if i % 61 == 17:
            row[rng.choice([1, 6, 13])] = "?"
        rows.append(", ".join(row))
    with open(out, "w") as fh:
        fh.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "adult_standin.data")
