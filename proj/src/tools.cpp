#include "sopmas/tools.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sopmas/serialize.hpp"
#include "sopmas/text.hpp"

namespace sopmas {

namespace fs = std::filesystem;

void ToolRegistry::add(std::string name, std::string usage, ToolHandler handler) {
  if (name.empty()) throw Error("tool name must not be empty");
  if (tools_.contains(name)) throw Error("tool registered twice: " + name);
  ToolInfo info{name, std::move(usage), std::move(handler)};
  tools_.emplace(std::move(name), std::move(info));
}

void ToolRegistry::alias(std::string alias, const std::string& target) {
  const ToolInfo* t = find(target);
  if (!t) throw Error("alias '" + alias + "' targets unknown tool '" + target + "'");
  ToolInfo copy = *t;
  copy.name = alias;
  add(std::move(alias), copy.usage, copy.handler);
}

const ToolInfo* ToolRegistry::find(const std::string& name) const {
  auto it = tools_.find(name);
  return it == tools_.end() ? nullptr : &it->second;
}

std::set<std::string> ToolRegistry::names() const {
  std::set<std::string> out;
  for (const auto& [name, _] : tools_) out.insert(name);
  return out;
}

namespace {

class TempDirGuard {
 public:
  TempDirGuard() {
    std::string tmpl = (fs::temp_directory_path() / "sopmas-sandbox-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw Error("cannot create sandbox directory: " + std::string(std::strerror(errno)));
    path_ = tmpl;
  }
  ~TempDirGuard() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

SandboxResult run_sandboxed(const std::string& command, const SandboxOptions& options) {
  std::optional<TempDirGuard> scratch;
  std::string dir;
  if (options.workdir) {
    dir = options.workdir->string();
  } else {
    scratch.emplace();
    dir = scratch->path().string();
  }

  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw Error("pipe failed: " + std::string(std::strerror(errno)));

  const rlim_t cpu = static_cast<rlim_t>(options.timeout.count() + 1);
  const bool isolate = options.isolate_network;
  static constexpr char kNoIsolation[] = "sandbox: network isolation unavailable\n";

  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw Error("fork failed: " + std::string(std::strerror(errno)));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(fds[1], STDOUT_FILENO);
    ::dup2(fds[1], STDERR_FILENO);
    int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    if (::chdir(dir.c_str()) != 0) ::_exit(126);
    if (isolate && ::unshare(CLONE_NEWNET) != 0 && ::unshare(CLONE_NEWUSER | CLONE_NEWNET) != 0) {
      [[maybe_unused]] auto n = ::write(STDOUT_FILENO, kNoIsolation, sizeof(kNoIsolation) - 1);
      ::_exit(125);
    }
    rlimit cpu_limit{cpu, cpu};
    ::setrlimit(RLIMIT_CPU, &cpu_limit);
    rlimit file_limit{64u << 20, 64u << 20};
    ::setrlimit(RLIMIT_FSIZE, &file_limit);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);

  SandboxResult result;
  auto deadline = std::chrono::steady_clock::now() + options.timeout;
  char buf[4096];
  for (;;) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      result.timed_out = true;
      break;
    }
    pollfd p{fds[0], POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) {
      result.timed_out = true;
      break;
    }
    ssize_t n = ::read(fds[0], buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    if (result.output.size() < options.max_output) {
      result.output.append(buf, std::min<std::size_t>(n, options.max_output - result.output.size()));
    }
  }
  ::close(fds[0]);
  ::kill(-pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

std::vector<SearchEntry> load_search_corpus(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read search corpus: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  Json j = Json::parse(os.str(), nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw Error("search corpus must be a JSON array: " + path.string());
  std::vector<SearchEntry> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("query") || !e.contains("snippet")) {
      throw Error("search corpus entries need 'query' and 'snippet': " + path.string());
    }
    out.push_back({e["query"].get<std::string>(), e["snippet"].get<std::string>()});
  }
  return out;
}

namespace {

std::set<std::string> token_set(std::string_view text) {
  std::set<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(std::move(cur));
  return out;
}

}  // namespace

std::optional<std::string> search_corpus(const std::vector<SearchEntry>& corpus, const std::string& query) {
  const std::string wanted = to_lower(trim(query));
  for (const auto& e : corpus) {
    if (to_lower(trim(e.query)) == wanted) return e.snippet;
  }
  auto q = token_set(query);
  std::size_t best = 0;
  const SearchEntry* hit = nullptr;
  for (const auto& e : corpus) {
    auto t = token_set(e.query);
    std::size_t overlap = std::count_if(t.begin(), t.end(), [&](const auto& w) { return q.contains(w); });
    if (overlap > best) {
      best = overlap;
      hit = &e;
    }
  }
  if (!hit) return std::nullopt;
  return hit->snippet;
}

ToolRegistry default_registry(const ToolConfig& config) {
  ToolRegistry reg;

  auto timeout = config.sandbox_timeout;
  reg.add("bash", "bash: runs a shell command in an empty scratch directory without network access. "
                  "Usage: `Action: tool: bash | args: <command>`",
          [timeout](const std::string& args) {
            SandboxOptions opts;
            opts.timeout = timeout;
            SandboxResult r = run_sandboxed(args, opts);
            std::string out = r.output;
            while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
            if (r.timed_out) return ToolResult{out + "\n[timed out after " + std::to_string(timeout.count()) + "s]", false};
            if (r.exit_code != 0) return ToolResult{out + "\n[exit status " + std::to_string(r.exit_code) + "]", false};
            return ToolResult{out, true};
          });

  std::optional<fs::path> root;
  if (config.file_root) root = fs::weakly_canonical(*config.file_root);
  reg.add("file_read", "file_read: returns the contents of a file below the shared data directory. "
                       "Usage: `Action: tool: file_read | args: <relative path>`",
          [root](const std::string& args) {
            if (!root) return ToolResult{"file_read is not configured with a root directory", false};
            fs::path rel = trim(args);
            fs::path target = fs::weakly_canonical(*root / rel);
            auto [r_end, _] = std::mismatch(root->begin(), root->end(), target.begin(), target.end());
            if (rel.is_absolute() || r_end != root->end()) {
              return ToolResult{"path escapes the allowed directory: " + rel.string(), false};
            }
            std::ifstream in(target, std::ios::binary);
            if (!in || fs::is_directory(target)) return ToolResult{"cannot read " + rel.string(), false};
            std::string data(64 * 1024, '\0');
            in.read(data.data(), static_cast<std::streamsize>(data.size()));
            data.resize(static_cast<std::size_t>(in.gcount()));
            return ToolResult{data, true};
          });

  std::vector<SearchEntry> corpus = config.inline_corpus;
  if (config.search_corpus) {
    auto more = load_search_corpus(*config.search_corpus);
    corpus.insert(corpus.end(), more.begin(), more.end());
  }
  reg.add("search_stub", "web search over a fixed offline corpus. Usage: `Action: tool: <tool name> | args: <search query>`",
          [corpus = std::move(corpus)](const std::string& args) {
            if (auto hit = search_corpus(corpus, args)) return ToolResult{*hit, true};
            return ToolResult{"no results for: " + trim(args), true};
          });

  for (const auto& [alias, target] : config.aliases) reg.alias(alias, target);
  return reg;
}

}  // namespace sopmas
