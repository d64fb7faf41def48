import json
import sys

import jsonschema


def check(schema_path, doc_path):
    schema = json.load(open(schema_path))
    doc = json.load(open(doc_path))
    validator = jsonschema.Draft202012Validator(schema)
    for err in validator.iter_errors(doc):
        print('/'.join(map(str, err.path)), err.message)
