import os

from twinforge.storage import KvLog, append_record, open_for_append, scan_records


def test_record_roundtrip(tmp_path):
    path = tmp_path / "log"
    fh = open_for_append(path, 0)
    for payload in (b"one", b"two", b"", b"\x00\xff" * 100):
        append_record(fh, payload)
    fh.close()
    records, valid = scan_records(path)
    assert records == [b"one", b"two", b"", b"\x00\xff" * 100]
    assert valid == os.path.getsize(path)


def test_torn_tail_discarded(tmp_path):
    path = tmp_path / "log"
    fh = open_for_append(path, 0)
    append_record(fh, b"keep")
    append_record(fh, b"gone")
    fh.close()
    size = os.path.getsize(path)
    with open(path, "r+b") as fh:
        fh.truncate(size - 2)
    records, valid = scan_records(path)
    assert records == [b"keep"]
    # reopening truncates the tail so appends stay aligned
    fh = open_for_append(path, valid)
    append_record(fh, b"next")
    fh.close()
    records, _ = scan_records(path)
    assert records == [b"keep", b"next"]


def test_corrupt_crc_stops_scan(tmp_path):
    path = tmp_path / "log"
    fh = open_for_append(path, 0)
    append_record(fh, b"aaaa")
    append_record(fh, b"bbbb")
    fh.close()
    with open(path, "r+b") as fh:
        fh.seek(-1, os.SEEK_END)
        fh.write(b"\x7f")
    records, _ = scan_records(path)
    assert records == [b"aaaa"]


def test_kvlog_replay(tmp_path):
    path = tmp_path / "kv.log"
    kv = KvLog(path)
    kv.put("a", {"x": 1})
    kv.put("b", [1, 2, 3])
    kv.put("a", {"x": 2})
    kv.delete("b")
    kv.close()

    kv2 = KvLog(path)
    assert kv2.get("a") == {"x": 2}
    assert kv2.get("b") is None
    assert kv2.keys() == ["a"]
    kv2.close()


def test_kvlog_prefix_listing(tmp_path):
    kv = KvLog(tmp_path / "kv.log")
    kv.put("thing|b", 2)
    kv.put("thing|a", 1)
    kv.put("policy|p", 3)
    assert kv.keys("thing|") == ["thing|a", "thing|b"]
    assert kv.items("policy|") == [("policy|p", 3)]
    kv.close()
