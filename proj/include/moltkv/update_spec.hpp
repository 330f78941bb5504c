#pragma once

#include <map>
#include <string>
#include <string_view>

#include "moltkv/registry.hpp"

namespace moltkv {

// A parsed update document: the version/rename changes plus the transform
// programs it carries. Remaining names must already be registered (programs
// from earlier updates, or host natives) by install time.
struct UpdateDocument {
  UpdateSpec spec;
  std::map<std::string, std::string> program_sources;
};

// Document format (the UPGRADE command body and the *.kvu file format):
//
//   change <old_prefix> <new_prefix> <from_version> <to_version> [name...]
//   transform <name> { <transform-lang program> }
//
// '#' comments and blank lines are free outside transform bodies. Prefixes
// are single tokens (no whitespace). Transformer names on a change line run
// oldest-first when migrating across that version edge.
//
// Throws ParseError; embedded programs are parsed and validated too.
UpdateDocument parse_update_document(std::string_view text);

}  // namespace moltkv
