"""Regenerates the starter HOG documents under crates/core/data/hog."""
import pathlib

IG = "Information gathering"
PM = "Pre-model"
MI = "Model-involved"
OI = "Outcome-involved"

SEED = [
    ("What types of data fall under the purview of the SME?",
     [f"{IG}/Identify sensitive categories"]),
    ("What laws/regulations are there for this data and its use?",
     [f"{IG}/Risk assessment"]),
    ("When do machine learning projects typically raise concern within the SME’s field? "
     "Are there external examples related to ML bias a data scientist should be aware of?",
     [f"{IG}/Risk assessment"]),
    ("What qualities would enable the data scientist to assess whether a project is low/medium/high risk? "
     "Are there ways to mitigate related risks?",
     [f"{IG}/Risk assessment"]),
    ("Are there data elements that we are not allowed to look at or need specific approval to use in bias mitigation?",
     [f"{IG}/Risk assessment"]),
    ("What metrics are typically used to evaluate fairness? Is there a standard accepted threshold for each metric?",
     [f"{PM}/Detect marginalized groups", f"{MI}/Pre-processing detection",
      f"{MI}/Post-processing detection", f"{OI}/Post-processing detection"]),
    ("What vetting is done for 3rd party data and what liabilities do we have in using the data?",
     [f"{IG}/Risk assessment"]),
    ("How would use of data (i.e. descriptive vs. predictive) impact if a project is considered low/medium/high risk?",
     [f"{PM}/Risk assessment"]),
    ("If a project requires additional data, what are the necessary approval steps?",
     [f"{PM}/Decide if more data is needed"]),
    ("Are proxy features a concern? Are there cases where proxy features are acceptable and/or appropriate "
     "from a business perspective?",
     [f"{PM}/Decide whether to drop proxy features", f"{PM}/Risk assessment"]),
    ("What vetting is done for internal models?",
     [f"{MI}/Risk assessment"]),
    ("What vetting is done for 3rd party models?",
     [f"{MI}/Risk assessment", f"{OI}/Risk assessment"]),
    ("Are there outcomes that always carry risk from the SME’s perspective relative to their field?",
     [f"{OI}/Risk assessment"]),
    ("Who should a data scientist contact for additional information?",
     [f"{PM}/Risk assessment", f"{MI}/Risk assessment", f"{OI}/Risk assessment"]),
]

HR_Q1_ANSWER = (
    "There are some key issues surrounding the use of people data, including the importance of having a deep "
    "understanding of data elements used.  During modeling there might be a correlation between a school and some "
    "outcome, but discrimination in education exists. Performance-related discrimination may be good but "
    "race-related is bad. Working with HR provides a clear understanding of people data elements."
)
PR_EXAMPLES_Q = "Are there external examples related to ML bias a data scientist should be aware of?"
PR_EXAMPLES_A = (
    "Media often identifies cases where individuals don’t seem to be treated fairly and/or seem to have the same "
    "opportunities. The output is judged more than the input for, e.g. job applicant screening, better services in "
    "some neighborhoods, and best offers and targeted ads going to certain demographics."
)

EXTRAS = {
    "HR": [
        ("What are the protected classes that may inform identification of sensitive categories?",
         "", [f"{IG}/Identify sensitive categories"], ["extra"]),
        ("What laws/regulations are in place for hiring or employee related data?",
         "", [f"{IG}/Risk assessment"], ["extra"]),
    ],
    "PR": [
        (PR_EXAMPLES_Q, PR_EXAMPLES_A, [f"{IG}/Risk assessment"], ["extra", "worked"]),
    ],
    "Privacy": [
        ("Are there privacy concerns in identifying protected classes? Do these concerns vary depending on the "
         "data subjects?", "", [f"{IG}/Identify sensitive categories"], ["extra"]),
        ("Are there privacy concerns around the reuse of data/models/bias history across business units?",
         "", [f"{IG}/Verify similarity", f"{IG}/Risk assessment"], ["extra"]),
    ],
}

FIELDS = {"HR": "hr", "PR": "pr", "Legal": "legal", "Privacy": "privacy", "Compliance": "compliance"}


def wrap(key, value, width=100):
    words = value.split(" ")
    lines, cur = [], f"{key}:"
    for w in words:
        if len(cur) + 1 + len(w) > width and cur != f"{key}:":
            lines.append(cur)
            cur = "  " + w
        else:
            cur = f"{cur} {w}" if not cur.endswith(":") or cur == f"{key}:" else cur + w
    lines.append(cur)
    return lines


def entry(q, a, stages, tags):
    out = ["[entry]"]
    out += wrap("question", q)
    if a:
        out += wrap("answer", a)
    out.append("stages: " + "; ".join(stages))
    out.append("tags: " + ", ".join(tags))
    return out


for field, stem in FIELDS.items():
    lines = [f"# Human oversight guide: {field}", f"sme_field: {field}", "revision: 1", "author: seed", ""]
    for i, (q, stages) in enumerate(SEED, start=1):
        a = HR_Q1_ANSWER if (field == "HR" and i == 1) else ""
        tags = ["seed", f"q{i}"] + (["worked"] if a else [])
        lines += entry(q, a, stages, tags) + [""]
    for q, a, stages, tags in EXTRAS.get(field, []):
        lines += entry(q, a, stages, tags) + [""]
    path = pathlib.Path(__file__).resolve().parent.parent / "crates/core/data/hog" / f"{stem}.hog"
    path.write_text("\n".join(lines).rstrip("\n") + "\n", encoding="utf-8")
