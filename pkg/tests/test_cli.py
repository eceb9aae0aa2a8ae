import json

import jwt
import pytest

from credential_hub.cli.interface import CLI, EXIT_FAILURE, EXIT_OK, EXIT_USAGE

from .conftest import ISSUE_BODY, ISSUER_DID, ISSUER_KEY_ID, ISSUER_URI, STUDENT_DID


@pytest.fixture
def cli(clock, rng):
    return CLI(clock=clock, rng=rng)


@pytest.fixture
def request_file(tmp_path):
    path = tmp_path / "request.json"
    path.write_text(json.dumps(ISSUE_BODY), encoding="utf-8")
    return str(path)


@pytest.fixture
def registered_issuer(cli, capsys):
    code = cli.run(
        [
            "keygen",
            "--alg", "ed25519",
            "--key-id", ISSUER_KEY_ID,
            "--register",
            "--permissions", "Issuer",
            "--issuer-uri", ISSUER_URI,
        ]
    )
    assert code == EXIT_OK
    capsys.readouterr()
    return cli


def _issue(cli, request_file, output):
    code = cli.run(
        ["issue", "--input", request_file, "--as", ISSUER_DID, "--output", output]
    )
    assert code == EXIT_OK
    with open(output, "r", encoding="utf-8") as f:
        return json.load(f)


def test_usage_errors(cli, capsys):
    assert cli.run([]) == EXIT_USAGE
    assert "keygen" in capsys.readouterr().out
    assert cli.run(["frobnicate"]) == EXIT_USAGE
    assert cli.run(["keygen", "--alg", "ed25519"]) == EXIT_USAGE
    assert cli.run(["keygen", "--alg", "ed25519", "--key-id"]) == EXIT_USAGE
    assert cli.run(["verify"]) == EXIT_USAGE
    assert cli.run(["verify", "--id", "a", "--input", "b"]) == EXIT_USAGE
    assert cli.run(["--config"]) == EXIT_USAGE
    assert "Ошибка использования" in capsys.readouterr().err


def test_help(cli, capsys):
    assert cli.run(["help"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "simulate" in out and "--keystore" in out


def test_keygen_prints_public_key_last(cli, capsys):
    code = cli.run(["keygen", "--alg", "ES256", "--key-id", "did:bacip:i#k"])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    # несжатая точка P-256: 65 байт
    assert len(lines[-1]) == 88

    assert cli.run(["keygen", "--alg", "rsa", "--key-id", "x"]) == EXIT_USAGE
    assert "rsa" in capsys.readouterr().err


def test_issue_verify_revoke(registered_issuer, request_file, tmp_path, capsys):
    cli = registered_issuer
    document = _issue(cli, request_file, str(tmp_path / "doc.json"))
    assert document["issuer"] == ISSUER_URI
    assert document["recipient"]["id"] == STUDENT_DID
    capsys.readouterr()

    assert cli.run(["verify", "--input", str(tmp_path / "doc.json")]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "valid"
    assert cli.run(["verify", "--id", document["id"]]) == EXIT_OK

    late = ["verify", "--input", str(tmp_path / "doc.json"), "--at", "2030-01-01"]
    assert cli.run(late) == EXIT_FAILURE
    assert capsys.readouterr().out.strip().splitlines()[-1] == "expired"

    revoke = ["revoke", "--id", document["id"], "--as", ISSUER_DID]
    assert cli.run(revoke + ["--reason", "fraud"]) == EXIT_OK
    assert cli.run(revoke) == EXIT_OK
    assert "уже отозвано" in capsys.readouterr().out

    assert cli.run(["verify", "--id", document["id"]]) == EXIT_FAILURE
    assert capsys.readouterr().out.strip() == "revoked"


def test_issue_prints_canonical_json(registered_issuer, request_file, capsys):
    cli = registered_issuer
    command = ["issue", "--input", request_file, "--as", ISSUER_DID]
    code = cli.run(command + ["--canonical"])
    assert code == EXIT_OK
    out = capsys.readouterr().out.strip()
    assert "\n" not in out
    assert json.loads(out)["credentialSubject"]["course"] == "BSc Computer Science"


def test_issue_failures(registered_issuer, request_file, tmp_path, capsys):
    cli = registered_issuer
    assert cli.run(["issue", "--input", request_file, "--as", "did:x:y"]) == 1
    assert "MissingPermission" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert cli.run(["issue", "--input", str(bad), "--as", ISSUER_DID]) == EXIT_USAGE
    missing = str(tmp_path / "absent.json")
    assert cli.run(["issue", "--input", missing, "--as", ISSUER_DID]) == EXIT_USAGE

    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"issuer": ISSUER_URI}), encoding="utf-8")
    code = cli.run(["issue", "--input", str(partial), "--as", ISSUER_DID])
    assert code == EXIT_FAILURE
    assert "/recipient" in capsys.readouterr().err


def test_missing_permission_is_rejected(cli, request_file, capsys):
    assert cli.run(
        ["keygen", "--alg", "ed25519", "--key-id", ISSUER_KEY_ID, "--register"]
    ) == EXIT_OK
    code = cli.run(["issue", "--input", request_file, "--as", ISSUER_DID])
    assert code == EXIT_FAILURE
    assert "MissingPermission" in capsys.readouterr().err


def test_consent_grant_and_audit(registered_issuer, request_file, tmp_path, capsys):
    cli = registered_issuer
    student_key = ["--key-id", f"{STUDENT_DID}#key-1", "--register"]
    assert cli.run(["keygen", "--alg", "ed25519"] + student_key) == EXIT_OK
    _issue(cli, request_file, str(tmp_path / "doc.json"))

    assert cli.run(["consent", "--action", "give", "--as", STUDENT_DID]) == EXIT_OK
    assert cli.run(["consent", "--action", "delete", "--as", STUDENT_DID]) == 1
    assert "ConsentStillGiven" in capsys.readouterr().err

    assert cli.run(["grant", "--user", STUDENT_DID, "--permissions", "2"]) == EXIT_OK
    assert cli.run(["grant", "--user", STUDENT_DID, "--permissions", "Dean"]) == 2

    capsys.readouterr()
    assert cli.run(["audit", "--event", "CredentialIssued"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "CredentialIssued" in out and "ConsentGiven" not in out
    assert cli.run(["audit", "--event", "Nonsense"]) == EXIT_USAGE
    assert cli.run(["audit", "--limit", "many"]) == EXIT_USAGE


def test_anchor_proof(registered_issuer, request_file, tmp_path, capsys):
    cli = registered_issuer
    document = _issue(cli, request_file, str(tmp_path / "doc.json"))
    capsys.readouterr()
    assert cli.run(["anchor-proof", "--id", document["id"]]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["verified"] is True
    assert result["claimed"]["revoked"] is False
    unknown = "00000000-0000-4000-8000-000000000000"
    assert cli.run(["anchor-proof", "--id", unknown]) == EXIT_FAILURE


def test_token(cli, capsys):
    key_id = "did:bacip:issuer123#key-1"
    assert cli.run(["keygen", "--alg", "es256", "--key-id", key_id]) == EXIT_OK
    capsys.readouterr()
    command = ["token", "--key-id", key_id, "--role", "Issuer", "--iat", "1516239022"]
    assert cli.run(command + ["--lifetime", "600"]) == EXIT_OK
    token = capsys.readouterr().out.strip()
    header = jwt.get_unverified_header(token)
    claims = jwt.decode(token, options={"verify_signature": False})
    assert header["alg"] == "ES256" and header["kid"] == key_id
    assert claims == {
        "sub": "did:bacip:issuer123",
        "role": "Issuer",
        "iat": 1516239022,
        "exp": 1516239622,
    }

    assert cli.run(["token", "--key-id", "absent", "--role", "Issuer"]) == 1


def test_keystore_flag(clock, rng, tmp_path):
    path = tmp_path / "elsewhere" / "keys.json"
    cli = CLI(clock=clock, rng=rng)
    code = cli.run(
        ["--keystore", str(path), "keygen", "--alg", "ed25519", "--key-id", "k1"]
    )
    assert code == EXIT_OK
    assert path.exists()


def test_simulate(cli, tmp_path, capsys):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(
        json.dumps(
            {
                "n": 4,
                "seed": 42,
                "byzantine": [{"node": "v0", "behavior": "EquivocateLeader"}],
                "txCount": 4,
                "heights": 3,
            }
        ),
        encoding="utf-8",
    )
    report = tmp_path / "report.json"
    code = cli.run(
        ["simulate", "--scenario", str(scenario), "--report", str(report)]
    )
    assert code == EXIT_OK
    assert "EquivocateLeader" in capsys.readouterr().out
    assert json.loads(report.read_text(encoding="utf-8"))["safetyViolations"] == 0

    assert cli.run(["simulate", "--scenario", str(tmp_path / "none.json")]) == 2
