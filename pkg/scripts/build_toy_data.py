"""Regenerate the bundled toy UAV corpus and ontology.

Requirements are written with role markup: ``[role words ...]``. Brackets are
stripped from the text; each role becomes an element of the syntax reference
with uniform weight.
"""

import json
import re
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "reqgen" / "data"

REQUIREMENTS = [
    ("When given a [cond landing command] [agent the internal simulator] [act shall move] [obj the UAV] to [obj the ground altitude].", ["landing", "internal simulator", "ground"]),
    ("[agent The UAV] [act shall transmit] [obj its current position] to [obj the ground station] [cons every second].", None),
    ("[agent The ground station] [act shall display] [obj the battery level] of [obj each UAV].", None),
    ("When [cond the battery level is low] [agent the UAV] [act shall return] to [obj the home location].", ["battery level", "home location"]),
    ("[agent The flight controller] [act shall maintain] [obj the assigned altitude] [cons during the mission].", None),
    ("[agent The operator] [act shall be able to] [act assign] [obj a flight plan] to [obj a UAV].", ["operator", "flight plan"]),
    ("[agent The route planner] [act shall compute] [obj a route] through [obj all waypoints] of [obj the mission].", None),
    ("If [cond a UAV enters a restricted zone] [agent the geofence monitor] [act shall notify] [obj the operator].", ["restricted zone", "geofence monitor", "operator"]),
    ("[agent The UAV] [act shall hover] at [obj its current waypoint] when [cond the gps signal is lost].", ["gps signal", "waypoint"]),
    ("[agent The collision avoidance system] [act shall detect] [obj obstacles] within [cons ten meters] of [obj the UAV].", None),
    ("[agent The ground station] [act shall record] [obj the telemetry data] of [obj each flight].", ["ground station", "telemetry data"]),
    ("[agent The internal simulator] [act shall compute] [obj the velocity] of [obj the simulated UAV].", None),
    ("When [cond a takeoff command is received] [agent the UAV] [act shall climb] to [obj the takeoff altitude].", ["takeoff command", "takeoff altitude"]),
    ("[agent The map view] [act shall show] [obj the position] of [obj all active UAVs].", None),
    ("[agent The mission planner] [act shall allow] [obj the operator] to [act modify] [obj the flight plan].", ["mission planner", "flight plan"]),
    ("[agent The UAV] [act shall land] at [obj the home location] when [cond the mission is completed].", None),
    ("[agent The flight controller] [act shall limit] [obj the velocity] of [obj the UAV] to [cons the maximum speed].", ["flight controller", "maximum speed"]),
    ("[agent The ground station] [act shall send] [obj a landing command] to [obj the selected UAV].", None),
    ("[agent The internal simulator] [act shall update] [obj the battery level] of [obj the simulated UAV] [cons every second].", ["internal simulator", "battery level"]),
    ("[agent The operator] [act shall be able to] [act cancel] [obj the current mission].", None),
    ("[agent The route planner] [act shall avoid] [obj restricted zones] when [cond computing a route].", ["route planner", "restricted zones"]),
    ("[agent The UAV] [act shall report] [obj its gps coordinates] to [obj the ground station].", None),
    ("[agent The geofence monitor] [act shall check] [obj the position] of [obj each UAV] [cons every second].", ["geofence monitor", "position"]),
    ("When [cond the operator selects a UAV] [agent the map view] [act shall highlight] [obj the selected UAV].", None),
    ("[agent The collision avoidance system] [act shall alter] [obj the flight path] when [cond an obstacle is detected].", ["collision avoidance system", "flight path", "obstacle"]),
    ("[agent The flight controller] [act shall execute] [obj the flight plan] assigned to [obj the UAV].", None),
    ("[agent The ground station] [act shall store] [obj the flight logs] of [obj all missions].", ["ground station", "flight logs"]),
    ("[agent The internal simulator] [act shall simulate] [obj the takeoff] of [obj a virtual UAV].", None),
    ("When [cond the wind speed exceeds the safety limit] [agent the UAV] [act shall abort] [obj the mission].", ["wind speed", "safety limit"]),
    ("[agent The operator] [act shall be able to] [act view] [obj the telemetry data] of [obj each UAV].", None),
    ("[agent The UAV] [act shall follow] [obj the route] computed by [obj the route planner].", ["route", "route planner"]),
    ("[agent The mission planner] [act shall validate] [obj each waypoint] against [obj the geofence].", None),
    ("[agent The flight controller] [act shall stabilize] [obj the UAV] during [cond hover].", ["flight controller", "hover"]),
    ("[agent The ground station] [act shall warn] [obj the operator] when [cond the battery level is low].", None),
    ("[agent The UAV] [act shall carry] [obj a camera payload] during [obj the surveillance mission].", ["camera payload", "surveillance mission"]),
    ("[agent The camera payload] [act shall capture] [obj images] of [obj the target area].", None),
    ("[agent The map view] [act shall display] [obj the restricted zones] in [cons red].", ["map view", "restricted zones"]),
    ("[agent The internal simulator] [act shall report] [obj the simulated position] to [obj the ground station].", None),
    ("When [cond communication is lost] [agent the UAV] [act shall return] to [obj the home location].", ["communication", "home location"]),
    ("[agent The route planner] [act shall minimize] [obj the flight time] of [obj the mission].", None),
    ("[agent The operator] [act shall be able to] [act define] [obj the home location] of [obj each UAV].", ["operator", "home location"]),
    ("[agent The flight controller] [act shall control] [obj the motors] of [obj the UAV].", None),
    ("[agent The ground station] [act shall list] [obj all registered UAVs].", ["ground station", "registered uavs"]),
    ("[agent The UAV] [act shall descend] to [obj the ground altitude] [cons at a safe rate].", None),
    ("[agent The geofence monitor] [act shall prevent] [obj the UAV] from [act leaving] [obj the flight area].", ["geofence monitor", "flight area"]),
    ("[agent The mission planner] [act shall generate] [obj waypoints] for [obj the surveillance mission].", None),
    ("[agent The internal simulator] [act shall model] [obj the wind speed] at [obj the flight altitude].", ["internal simulator", "wind speed"]),
    ("[agent The UAV] [act shall send] [obj telemetry data] to [obj the ground station] [cons every second].", None),
    ("When [cond a waypoint is reached] [agent the flight controller] [act shall notify] [obj the mission planner].", ["waypoint", "flight controller", "mission planner"]),
    ("[agent The operator] [act shall be able to] [act pause] [obj the mission] of [obj a UAV].", None),
    ("[agent The collision avoidance system] [act shall use] [obj the camera payload] to [act detect] [obj obstacles].", ["collision avoidance system", "camera payload"]),
    ("[agent The ground station] [act shall compute] [obj the distance] between [obj each UAV] and [obj the home location].", None),
    ("[agent The UAV] [act shall keep] [obj a minimum separation] from [obj other UAVs].", ["minimum separation", "uavs"]),
    ("[agent The route planner] [act shall assign] [obj a flight altitude] to [obj each route].", None),
    ("[agent The map view] [act shall show] [obj the flight path] of [obj the selected UAV].", ["map view", "flight path"]),
    ("[agent The internal simulator] [act shall emulate] [obj the gps signal] of [obj a virtual UAV].", None),
    ("[agent The flight controller] [act shall read] [obj the altitude] from [obj the barometer].", ["flight controller", "barometer"]),
    ("[agent The operator] [act shall be able to] [act upload] [obj a mission] to [obj the ground station].", None),
    ("[agent The UAV] [act shall log] [obj the battery level] [cons every second].", ["uav", "battery level"]),
    ("[agent The ground station] [act shall verify] [obj the flight plan] before [cond takeoff].", None),
]

ONTOLOGY = [
    # class hierarchy
    ("quadcopter", "subClassOf", "uav"),
    ("fixed wing uav", "subClassOf", "uav"),
    ("virtual uav", "subClassOf", "uav"),
    ("simulated uav", "subClassOf", "virtual uav"),
    ("uav", "subClassOf", "aircraft"),
    ("internal simulator", "subClassOf", "simulator"),
    ("simulator", "subClassOf", "software component"),
    ("ground station", "subClassOf", "control system"),
    ("flight controller", "subClassOf", "control system"),
    ("route planner", "subClassOf", "software component"),
    ("mission planner", "subClassOf", "software component"),
    ("geofence monitor", "subClassOf", "software component"),
    ("map view", "subClassOf", "user interface"),
    ("collision avoidance system", "subClassOf", "safety system"),
    ("geofence monitor", "subClassOf", "safety system"),
    ("camera payload", "subClassOf", "payload"),
    ("barometer", "subClassOf", "sensor"),
    ("gps receiver", "subClassOf", "sensor"),
    ("camera payload", "subClassOf", "sensor"),
    ("landing", "subClassOf", "flight phase"),
    ("takeoff", "subClassOf", "flight phase"),
    ("hover", "subClassOf", "flight phase"),
    ("surveillance mission", "subClassOf", "mission"),
    ("landing command", "subClassOf", "command"),
    ("takeoff command", "subClassOf", "command"),
    ("restricted zone", "subClassOf", "zone"),
    ("flight area", "subClassOf", "zone"),
    ("home location", "subClassOf", "location"),
    ("waypoint", "subClassOf", "location"),
    ("ground altitude", "subClassOf", "altitude"),
    ("takeoff altitude", "subClassOf", "altitude"),
    ("flight altitude", "subClassOf", "altitude"),
    ("telemetry data", "subClassOf", "data"),
    ("flight logs", "subClassOf", "data"),
    ("battery level", "subClassOf", "telemetry data"),
    ("gps signal", "subClassOf", "signal"),
    ("operator", "subClassOf", "user"),
    ("aircraft", "hasSuperClasses", "vehicle"),
    ("obstacle", "hasSuperClasses", "physical object"),
    # properties
    ("simulates", "hasDomain", "internal simulator"),
    ("simulates", "hasRange", "virtual uav"),
    ("flies", "hasDomain", "uav"),
    ("flies", "hasRange", "flight plan"),
    ("monitors", "hasDomain", "ground station"),
    ("monitors", "hasRange", "uav"),
    ("assigns", "hasDomain", "operator"),
    ("assigns", "hasRange", "flight plan"),
    ("computes", "hasDomain", "route planner"),
    ("computes", "hasRange", "route"),
    ("detects", "hasDomain", "collision avoidance system"),
    ("detects", "hasRange", "obstacle"),
    ("carries", "hasDomain", "uav"),
    ("carries", "hasRange", "camera payload"),
    ("reaches", "hasDomain", "uav"),
    ("reaches", "hasRange", "waypoint"),
    ("guards", "hasDomain", "geofence monitor"),
    ("guards", "hasRange", "restricted zone"),
    ("records", "hasDomain", "ground station"),
    ("records", "hasRange", "telemetry data"),
    ("displays", "hasDomain", "map view"),
    ("displays", "hasRange", "flight path"),
    ("measures", "hasDomain", "barometer"),
    ("measures", "hasRange", "altitude"),
    ("plans", "hasDomain", "mission planner"),
    ("plans", "hasRange", "mission"),
    ("returns to", "hasDomain", "uav"),
    ("returns to", "hasRange", "home location"),
    ("lands on", "hasDomain", "uav"),
    ("lands on", "hasRange", "ground"),
    ("commands", "hasDomain", "operator"),
    ("reaches", "subPropertyOf", "flies"),
    ("lands on", "subPropertyOf", "flies"),
    ("returns to", "subPropertyOf", "flies"),
    # other relations
    ("flight plan", "contains", "waypoint"),
    ("route", "contains", "waypoint"),
    ("mission", "uses", "flight plan"),
    ("uav", "has part", "flight controller"),
    ("uav", "has part", "gps receiver"),
    ("uav", "has part", "barometer"),
    ("uav", "has part", "motors"),
    ("uav", "has", "battery level"),
    ("uav", "follows", "flight path"),
    ("flight path", "passes", "waypoint"),
    ("gps receiver", "receives", "gps signal"),
    ("flight controller", "controls", "motors"),
    ("flight controller", "controls", "velocity"),
    ("ground station", "sends", "landing command"),
    ("ground station", "sends", "takeoff command"),
    ("internal simulator", "models", "wind speed"),
    ("internal simulator", "models", "ground"),
    ("wind speed", "bounded by", "safety limit"),
    ("velocity", "bounded by", "maximum speed"),
    ("uav", "keeps", "minimum separation"),
    ("landing", "ends at", "ground"),
    ("ground", "has", "ground altitude"),
    ("takeoff", "starts at", "home location"),
    ("geofence", "encloses", "flight area"),
    ("geofence", "excludes", "restricted zone"),
    ("camera payload", "captures", "images"),
    ("images", "depict", "target area"),
    ("communication", "links", "ground station"),
    ("communication", "links", "uav"),
    ("operator", "uses", "map view"),
    ("operator", "uses", "ground station"),
]

ROLE_NAMES = {"cond": "condition", "agent": "agent", "act": "action", "obj": "object", "cons": "constraint"}
SKIP = {"the", "a", "an"}
_SPAN = re.compile(r"\[(\w+) ([^\]]+)\]")


def parse(markup):
    roles = {}
    for tag, words in _SPAN.findall(markup):
        name = ROLE_NAMES[tag]
        toks = [w for w in re.sub(r"[.,;:()?!]", " ", words.lower()).split() if w not in SKIP]
        bucket = roles.setdefault(name, [])
        bucket.extend(t for t in toks if t not in bucket)
    text = _SPAN.sub(lambda m: m.group(2), markup)
    alpha = round(1.0 / len(roles), 12)
    out = {}
    names = list(roles)
    for i, name in enumerate(names):
        a = alpha if i < len(names) - 1 else round(1.0 - alpha * (len(names) - 1), 12)
        out[name] = {"words": roles[name], "alpha": a}
    return text, out


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "uav_requirements.jsonl", "w", encoding="utf-8") as fh:
        for i, (markup, keywords) in enumerate(REQUIREMENTS, start=1):
            text, roles = parse(markup)
            rec = {"id": f"UAV-{i:03d}", "text": text}
            if keywords:
                rec["keywords"] = keywords
            rec["roles"] = roles
            fh.write(json.dumps(rec) + "\n")
    with open(OUT / "uav_ontology.jsonl", "w", encoding="utf-8") as fh:
        for s, r, o in ONTOLOGY:
            fh.write(json.dumps({"s": s, "r": r, "o": o}) + "\n")


if __name__ == "__main__":
    main()
