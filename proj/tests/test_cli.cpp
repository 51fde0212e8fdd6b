#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "lsn/dataset.hpp"
#include "lsn/viz.hpp"

#ifndef LSN_CLI_PATH
#error "LSN_CLI_PATH must name the lsn executable"
#endif

using namespace lsn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(LSN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lsn_test_cli_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

// Minimal XML well-formedness check for the subset the renderer emits: a
// prolog, nested elements with quoted attributes, and escaped text.
bool well_formed(const std::string& xml) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool root_seen = false;
  if (xml.rfind("<?xml", 0) == 0) i = xml.find("?>") + 2;
  static const std::regex open_tag(R"re(^<([A-Za-z][\w:-]*)((\s+[\w:-]+="[^"<&]*")*)\s*(/?)>)re");
  static const std::regex close_tag(R"(^</([A-Za-z][\w:-]*)\s*>)");
  while (i < xml.size()) {
    if (xml[i] != '<') {
      const std::size_t next = xml.find('<', i);
      const std::string text = xml.substr(i, next - i);
      if (stack.empty() && text.find_first_not_of(" \n\t\r") != std::string::npos) return false;
      for (std::size_t a = text.find('&'); a != std::string::npos; a = text.find('&', a + 1)) {
        if (!std::regex_search(text.substr(a), std::regex("^&(amp|lt|gt|quot|apos);"))) return false;
      }
      if (next == std::string::npos) break;
      i = next;
      continue;
    }
    std::smatch m;
    const std::string rest = xml.substr(i, std::min<std::size_t>(xml.size() - i, 200000));
    if (std::regex_search(rest, m, close_tag)) {
      if (stack.empty() || stack.back() != m[1].str()) return false;
      stack.pop_back();
    } else if (std::regex_search(rest, m, open_tag)) {
      if (stack.empty() && root_seen) return false;
      root_seen = true;
      if (m[4].str().empty()) stack.push_back(m[1].str());
    } else {
      return false;
    }
    i += static_cast<std::size_t>(m.length(0));
  }
  return root_seen && stack.empty();
}

// Polylines of each panel, as point lists relative to the panel's frame.
std::vector<std::vector<std::string>> panel_polylines(const std::string& svg) {
  std::vector<std::vector<std::string>> panels;
  static const std::regex rect(R"re(<rect x="([-\d.]+)" y="([-\d.]+)")re");
  static const std::regex poly(R"re(points="([^"]*)")re");
  std::size_t pos = 0;
  for (;;) {
    const std::size_t start = svg.find("<g class=\"panel\">", pos);
    if (start == std::string::npos) break;
    std::size_t end = svg.find("<g class=\"panel\">", start + 1);
    if (end == std::string::npos) end = svg.size();
    const std::string body = svg.substr(start, end - start);
    std::smatch r;
    REQUIRE(std::regex_search(body, r, rect));
    const double ox = std::stod(r[1]), oy = std::stod(r[2]);
    std::vector<std::string> lines;
    for (auto it = std::sregex_iterator(body.begin(), body.end(), poly); it != std::sregex_iterator(); ++it) {
      std::string rel;
      std::istringstream pts((*it)[1].str());
      for (std::string xy; pts >> xy;) {
        const auto comma = xy.find(',');
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", std::stod(xy.substr(0, comma)) - ox,
                      std::stod(xy.substr(comma + 1)) - oy);
        rel += buf;
      }
      lines.push_back(rel);
    }
    panels.push_back(lines);
    pos = end;
  }
  return panels;
}

std::set<std::string> manifest_ids(const fs::path& dir) {
  std::set<std::string> ids;
  for (const Scene& s : load_dataset(dir)) ids.insert(s.id);
  return ids;
}

}  // namespace

TEST_CASE("gen-data is reproducible and splits are disjoint") {
  const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b"), s = fresh_dir("gen_split");
  REQUIRE(run("gen-data --scenes 3 --frames 2 --seed 7 --out " + a.string()).code == 0);
  REQUIRE(run("gen-data --scenes 3 --frames 2 --seed 7 --out " + b.string()).code == 0);
  CHECK(tree(a) == tree(b));
  CHECK(tree(a).count("manifest.txt") == 1);

  const Run split = run("gen-data --scenes 3 --frames 2 --seed 7 --split 2:1 --out " + s.string());
  REQUIRE(split.code == 0);
  const auto train = manifest_ids(s / "train"), test = manifest_ids(s / "test");
  CHECK(train.size() == 2);
  CHECK(test.size() == 1);
  for (const auto& id : test) CHECK(train.count(id) == 0);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("gen-data --scenes 0 --out " + fresh_dir("zero").string()).code == 2);
  CHECK(run("gen-data --scenes 3 --split 2:2 --out " + fresh_dir("badsplit").string()).code == 2);
  CHECK(run("gen-data --scenes 3 --set no_such_key=1 --out " + fresh_dir("badkey").string()).code == 2);
  CHECK(run("bogus").code == 2);
  CHECK(run("").code == 2);
  const Run r = run("flops --preset resnet34-shape");
  CHECK(r.code == 2);
  CHECK(r.out.find("resnet50-shape") != std::string::npos);
}

TEST_CASE("flops prints a per-layer table, the total and the ratio") {
  const Run r = run("flops --preset resnet18-shape");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("conv1") != std::string::npos);
  CHECK(r.out.find("total resnet18-shape:") != std::string::npos);
  std::smatch m;
  REQUIRE(std::regex_search(r.out, m, std::regex(R"(ratio resnet50-shape / resnet18-shape: ([\d.]+))")));
  const double ratio = std::stod(m[1]);
  CHECK(ratio >= 1.9);
  CHECK(ratio <= 2.3);
}

TEST_CASE("eval of the oracle prints mAP 1 and writes the report") {
  const fs::path d = fresh_dir("eval");
  REQUIRE(run("gen-data --scenes 2 --frames 2 --seed 3 --out " + (d / "data").string()).code == 0);
  const Run r = run("eval --oracle --data " + (d / "data").string() + " --out " + (d / "report.txt").string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("map = 1\n") != std::string::npos);
  CHECK(r.out.find("# resolved config, hash ") != std::string::npos);
  CHECK(slurp(d / "report.txt").rfind("map = 1\n", 0) == 0);
  CHECK(run("eval --data " + (d / "data").string()).code == 2);
}

TEST_CASE("resume refuses a different configuration") {
  const fs::path d = fresh_dir("resume");
  REQUIRE(run("gen-data --scenes 1 --frames 2 --seed 3 --out " + (d / "data").string()).code == 0);
  const std::string common = " --data " + (d / "data").string() + " --set checkpoint_dir=" + (d / "run").string() +
                             " --set epochs=0";
  REQUIRE(run("train" + common).code == 0);
  const fs::path ckpt = d / "run" / "ckpt_epoch_0.bin";
  REQUIRE(fs::exists(ckpt));
  const Run bad = run("resume --checkpoint " + ckpt.string() + common + " --set lr=0.5");
  CHECK(bad.code == 1);
  std::smatch m;
  CHECK(std::regex_search(bad.out, m, std::regex("checkpoint [0-9a-f]{16}, config [0-9a-f]{16}")));
  CHECK(run("resume --checkpoint " + ckpt.string() + common).code == 0);
}

TEST_CASE("viz renders well-formed SVG") {
  const fs::path d = fresh_dir("viz");
  REQUIRE(run("gen-data --scenes 1 --frames 2 --seed 11 --out " + (d / "data").string()).code == 0);
  const std::string id = *manifest_ids(d / "data").begin();
  const Run r = run("viz --dataset " + (d / "data").string() + " --scene " + id + " --out " + (d / "svg").string());
  REQUIRE(r.code == 0);
  const std::string svg = slurp(d / "svg" / (id + "_frame0.svg"));
  CHECK(well_formed(svg));
  CHECK(panel_polylines(svg).size() == 1);

  const Run missing = run("viz --dataset " + (d / "data").string() + " --scene nope --out " + (d / "svg").string());
  CHECK(missing.code == 1);
  CHECK(missing.out.find(id) != std::string::npos);
}

TEST_CASE("oracle predictions render the same geometry in both panels") {
  SceneParams p;
  p.frames = 2;
  const Scene s = generate_scenes(21, 1, p)[0];
  std::vector<LaneSegment> preds = s.groundtruth[0];
  for (auto& l : preds) l.score = 1.0;
  const std::string svg = render_bev_svg(p.extent, s.groundtruth[0], &preds, "oracle");
  CHECK(well_formed(svg));
  const auto panels = panel_polylines(svg);
  REQUIRE(panels.size() == 2);
  CHECK(!panels[0].empty());
  CHECK(panels[0] == panels[1]);

  SUBCASE("low scores are hidden") {
    for (auto& l : preds) l.score = 0.29;
    const auto hidden = panel_polylines(render_bev_svg(p.extent, s.groundtruth[0], &preds, "low"));
    CHECK(hidden[1].empty());
  }
  SUBCASE("titles are escaped") {
    CHECK(well_formed(render_bev_svg(p.extent, s.groundtruth[0], nullptr, "a < b & \"c\"")));
  }
}

TEST_CASE("the checker rejects malformed XML") {
  CHECK_FALSE(well_formed("<svg><g></svg>"));
  CHECK_FALSE(well_formed("<svg a=b/>"));
  CHECK_FALSE(well_formed("<svg>a & b</svg>"));
  CHECK(well_formed("<svg><g x=\"1\"/>t &amp; u</svg>"));
}
