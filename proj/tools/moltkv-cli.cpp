#include <cctype>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moltkv/client.hpp"
#include "moltkv/errors.hpp"

using moltkv::Reply;

namespace {

// Double quotes group; \" \\ \n \r \t inside them unescape. Bare words split
// on whitespace.
std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) i++;
    if (i >= line.size()) break;
    std::string tok;
    if (line[i] == '"') {
      i++;
      while (i < line.size() && line[i] != '"') {
        if (line[i] == '\\' && i + 1 < line.size()) {
          char c = line[++i];
          tok += c == 'n' ? '\n' : c == 'r' ? '\r' : c == 't' ? '\t' : c;
        } else {
          tok += line[i];
        }
        i++;
      }
      if (i >= line.size()) throw std::runtime_error("unterminated quote");
      i++;
    } else {
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) tok += line[i++];
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::string printable(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) == 0x7f) {
          char b[8];
          std::snprintf(b, sizeof b, "\\x%02x", static_cast<unsigned char>(c));
          out += b;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}

void print_reply(const Reply& r) {
  switch (r.kind) {
    case Reply::Kind::Status: std::cout << r.text << "\n"; break;
    case Reply::Kind::Error: std::cout << "(error) " << r.text << "\n"; break;
    case Reply::Kind::Int: std::cout << "(integer) " << r.num << "\n"; break;
    case Reply::Kind::Bulk: std::cout << printable(r.bulk) << "\n"; break;
    case Reply::Kind::Nil: std::cout << "(nil)\n"; break;
    case Reply::Kind::Array:
      if (r.array.empty()) std::cout << "(empty array)\n";
      for (size_t i = 0; i < r.array.size(); i++)
        std::cout << (i + 1) << ") " << printable(r.array[i]) << "\n";
      break;
  }
}

// `UPGRADE @file.kvu` sends the file's contents as the document.
void substitute_files(const std::string& verb, std::vector<std::string>& args) {
  if (verb != "UPGRADE") return;
  for (auto& a : args) {
    if (a.empty() || a[0] != '@') continue;
    std::ifstream f(a.substr(1), std::ios::binary);
    if (!f) throw std::runtime_error("cannot read '" + a.substr(1) + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    a = ss.str();
  }
}

int run_one(moltkv::Client& client, std::vector<std::string> toks) {
  std::string verb = toks[0];
  for (char& c : verb) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  toks.erase(toks.begin());
  substitute_files(verb, toks);
  Reply r = client.command(verb, toks);
  print_reply(r);
  return r.kind == Reply::Kind::Error ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moltkv command line client"};

  std::string host = "127.0.0.1";
  uint16_t port = 7611;
  std::string token;
  std::string declare;  // prefix=version[,prefix=version...]
  std::vector<std::string> command;

  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port)->capture_default_str();
  app.add_option("--auth", token, "AUTH token sent after connecting");
  app.add_option("--declare", declare, "prefix=version[,...] pairs for HELLO");
  app.add_option("command", command, "one command to run instead of the repl");
  CLI11_PARSE(app, argc, argv);

  try {
    moltkv::Client client;
    client.connect(host, port);
    if (!token.empty()) client.auth(token);

    std::vector<std::pair<std::string, uint32_t>> decls;
    std::istringstream ds(declare);
    std::string d;
    while (std::getline(ds, d, ',')) {
      if (d.empty()) continue;
      size_t eq = d.rfind('=');
      if (eq == std::string::npos) throw std::runtime_error("--declare wants prefix=version");
      decls.emplace_back(d.substr(0, eq),
                         static_cast<uint32_t>(std::stoul(d.substr(eq + 1))));
    }
    if (!client.hello(decls)) {
      std::cout << "(error) " << client.mismatch() << "\n";
      return 1;
    }

    if (!command.empty()) return run_one(client, command);

    std::string line;
    while (std::cout << "moltkv> " << std::flush, std::getline(std::cin, line)) {
      try {
        auto toks = tokenize(line);
        if (toks.empty()) continue;
        if (toks[0] == "quit" || toks[0] == "exit") break;
        run_one(client, toks);
      } catch (const moltkv::IoError&) {
        throw;  // connection gone, leave the repl
      } catch (const std::exception& e) {
        std::cout << "(error) " << e.what() << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "moltkv-cli: %s\n", e.what());
    return 1;
  }
}
