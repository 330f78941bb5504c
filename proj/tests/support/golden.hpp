#pragma once

// The purchase-order document and its discount update, frozen byte-for-byte.
// Field order in the expected text is the normalized (sorted-key) form the
// transform language emits.

namespace golden {

inline const char* kOrderDoc =
    R"({"_id":"4BD8AE97C47016442AF4A580","customerid":99999,"name":"Foo Sushi Inc","since":"12/12/2012",)"
    R"("order":{"orderid":"UXWE-122012","orderdate":"12/12/2001","orderItems":[{"product":"Cookies","price":19.99}]}})";

inline const char* kOrderProgram =
    "foreach order/orderItems { rename price fullPrice; add discountedPrice = fullPrice - 3.0; }";

inline const char* kOrderExpected =
    R"({"_id":"4BD8AE97C47016442AF4A580","customerid":99999,"name":"Foo Sushi Inc",)"
    R"("order":{"orderItems":[{"discountedPrice":16.99,"fullPrice":19.99,"product":"Cookies"}],)"
    R"("orderdate":"12/12/2001","orderid":"UXWE-122012"},"since":"12/12/2012"})";

}  // namespace golden
