"""Shared hand-built inputs for prior, refinement and pipeline tests."""

from geotagger.geodesy import EnuPoint, GeoPoint, LocalFrame

FRAME = LocalFrame(GeoPoint(53.3498, -6.2603))


def osm_xml(roads=(), buildings=(), frame=FRAME, extra_ways=""):
    """OSM XML from ENU polylines (roads) and closed rings (buildings, last == first)."""
    nodes, ways = [], []
    nid = 0

    def add(pt):
        nonlocal nid
        nid += 1
        g = frame.from_enu(EnuPoint(*pt))
        nodes.append(f'  <node id="{nid}" lat="{g.lat:.12f}" lon="{g.lon:.12f}"/>')
        return nid

    wid = 100
    for kind, lines in (("highway", roads), ("building", buildings)):
        for line in lines:
            ids = [add(p) for p in line]
            if kind == "building":
                ids[-1] = ids[0]
                nodes.pop()
                nid -= 1
            wid += 1
            refs = "".join(f'<nd ref="{i}"/>' for i in ids)
            value = "residential" if kind == "highway" else "yes"
            ways.append(f'  <way id="{wid}">{refs}<tag k="{kind}" v="{value}"/></way>')
    body = "\n".join(nodes + ways)
    return f'<?xml version="1.0"?>\n<osm version="0.6">\n{body}\n{extra_ways}</osm>\n'
