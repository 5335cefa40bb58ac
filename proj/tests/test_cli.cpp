#include <doctest.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "esr/audio_io.hpp"
#include "support/signals.hpp"

#include <httplib.h>

using namespace esr;
using testing::concat;
using testing::noise;
using testing::silence;
using testing::tone;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run esr_cli(const std::string& args) {
  const std::string cmd = std::string(ESR_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  Run r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("esr_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string wav(const std::string& name, const std::vector<double>& x) const {
    write_wav_file(path / name, SampleBuffer(x));
    return (path / name).string();
  }
};

std::vector<double> burst(double freq, double amp) {
  return concat({silence(0.3), tone(freq, amp, 0.8), silence(0.6)});
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(esr_cli("").code == 2);
  CHECK(esr_cli("frobnicate").code == 2);
  CHECK(esr_cli("features").code == 2);
  CHECK(esr_cli("features x.wav --bogus").code == 2);
  CHECK(esr_cli("eval --kb x --algo svm").code == 2);
  CHECK(esr_cli("serve --kb x --columns-rate 10").code == 2);
  CHECK(esr_cli("synth-corpus --out x --classes 31").code == 2);
  const auto help = esr_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("synth-corpus") != std::string::npos);
}

TEST_CASE("features prints 54 values") {
  TempDir d("features");
  const auto r = esr_cli("features " + d.wav("silence.wav", silence(1.0)));
  CHECK(r.code == 0);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 54);
  for (const auto& l : ls) CHECK_NOTHROW((void)std::stod(l));
  const auto named = lines(esr_cli("features --names " + d.wav("t.wav", burst(440, 0.3))).out);
  REQUIRE(named.size() == 54);
  CHECK(named[0].starts_with("mean.rolloff "));
}

TEST_CASE("domain errors exit 1") {
  TempDir d("errors");
  CHECK(esr_cli("features " + (d.path / "missing.wav").string()).code == 1);
  {
    std::FILE* f = std::fopen((d.path / "junk.wav").c_str(), "w");
    std::fputs("not a wav file at all", f);
    std::fclose(f);
  }
  CHECK(esr_cli("features " + (d.path / "junk.wav").string()).code == 1);
  const auto beep = d.wav("beep.wav", burst(1000, 0.3));
  CHECK(esr_cli("recognize " + beep + " --kb " + (d.path / "nokb").string()).code == 1);
  CHECK(esr_cli("record live --kb " + (d.path / "kb").string() + " --label X").code == 1);
  CHECK(esr_cli("record " + d.wav("quiet.wav", silence(1.0)) + " --kb " + (d.path / "kb").string() +
                " --label X").code == 1);
}

TEST_CASE("record then recognize the same burst") {
  TempDir d("toy");
  const auto kb = (d.path / "toy").string();
  const auto beep = d.wav("beep.wav", burst(1000, 0.3));
  CHECK(esr_cli("record " + beep + " --kb " + kb + " --label Beep").code == 0);
  CHECK(esr_cli("record " + d.wav("beep2.wav", burst(1000, 0.5)) + " --kb " + kb + " --label Beep").code == 0);
  const auto hiss = d.wav("hiss.wav", concat({silence(0.3), noise(0.3, 0.8, 2), silence(0.6)}));
  const auto hiss2 = d.wav("hiss2.wav", concat({silence(0.3), noise(0.4, 0.8, 3), silence(0.6)}));
  CHECK(esr_cli("record " + hiss + " --kb " + kb + " --label Hiss --env kitchen").code == 0);
  CHECK(esr_cli("record " + hiss2 + " --kb " + kb + " --label Hiss").code == 0);
  CHECK(fs::exists(fs::path(kb) / "kb.json"));
  CHECK(fs::exists(fs::path(kb) / "audio" / "1.wav"));

  const auto r = esr_cli("recognize " + beep + " --kb " + kb);
  REQUIRE(r.code == 0);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() >= 3);
  CHECK(ls[0] == "class: Beep");
  CHECK(std::stoi(ls[1].substr(7)) >= 4);
  CHECK(ls[2].starts_with("g: "));
  CHECK(esr_cli("recognize " + hiss + " --kb " + kb + " --env kitchen").out.starts_with("class: Hiss"));
}

TEST_CASE("synth-corpus and eval") {
  TempDir d("synth");
  const auto out = (d.path / "synth").string();
  const auto s = esr_cli("synth-corpus --out " + out + " --classes 3 --instances 4 --seed 2");
  CHECK(s.code == 0);
  CHECK(fs::exists(fs::path(out) / "kb.json"));
  CHECK(fs::exists(fs::path(out) / "audio" / "12.wav"));

  const auto e = esr_cli("eval --kb " + out + " --folds 4 --algo nb");
  REQUIRE(e.code == 0);
  const auto ls = lines(e.out);
  REQUIRE(ls.size() == 6);
  CHECK(ls[0].starts_with("row,algorithm,fold"));
  CHECK(ls[5].starts_with("summary,nb,all"));
  std::vector<std::string> cells;
  std::istringstream row(ls[5]);
  for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
  const double acc = std::stod(cells.at(6));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  const auto c = esr_cli("eval --kb " + out + " --folds 2 --algo 1nn --curves --reps 1");
  REQUIRE(c.code == 0);
  CHECK(c.out.find("# instances per class\ngrid_value,accuracy,stderr\n2,") != std::string::npos);
  CHECK(c.out.find("# classes\ngrid_value,accuracy,stderr\n2,") != std::string::npos);
}

TEST_CASE("serve binds loopback and stops on SIGTERM") {
  TempDir d("serve");
  const std::string cmd = "sh -c 'echo $$; exec " + std::string(ESR_CLI_PATH) + " serve --kb " +
                          (d.path / "kb").string() + " --port 0'";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char line[256];
  REQUIRE(std::fgets(line, sizeof line, p));
  const pid_t pid = static_cast<pid_t>(std::stol(line));
  REQUIRE(std::fgets(line, sizeof line, p));
  const std::string listening = line;
  REQUIRE(listening.starts_with("listening on http://127.0.0.1:"));
  const int port = std::stoi(listening.substr(std::string("listening on http://127.0.0.1:").size()));
  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/api/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  ::kill(pid, SIGTERM);
  const int status = ::pclose(p);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}
