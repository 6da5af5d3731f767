# Minimal stand-in for an execution worker: answers each request with the
# reversed problem text, and misbehaves on demand.
import json
import os
import sys
import time

for line in sys.stdin:
    req = json.loads(line)
    rid, kind, payload = req["id"], req["kind"], req.get("payload") or {}
    if kind == "shutdown":
        sys.exit(0)
    if kind == "exec_code":
        out = {"id": rid, "status": "no_error", "payload": {"result": "no error"}}
    else:
        problem = payload.get("problem", "")
        if problem == "crash":
            os._exit(3)
        if problem == "hang":
            time.sleep(60)
        if problem == "noise":
            print("not json", flush=True)
        if "syntax" in payload.get("source", ""):
            out = {"id": rid, "status": "exec_failure",
                   "payload": {"exec_fail_case": "SyntaxError: invalid syntax", "stage": "load"}}
        elif problem == "boom":
            out = {"id": rid, "status": "exec_failure", "payload": {"exec_fail_case": "ZeroDivisionError"}}
        else:
            out = {"id": rid, "status": "no_error", "payload": {"answer": problem[::-1], "cost": 0.5}}
    print(json.dumps(out), flush=True)
