import type { NotificationRecord, SchemaPayload } from "../src/types.js";

/** Hand-trimmed copy of the server's /schema payload for unit tests. */
export const schemaFixture: SchemaPayload = {
  classes: [
    { name: "Element", parents: [], namespace: "common" },
    { name: "Finding", parents: ["Element"], namespace: "common" },
    { name: "Increase", parents: ["Finding"], namespace: "common" },
    { name: "DiscountPrice", parents: ["Finding"], namespace: "common" },
    { name: "Phone", parents: ["Element"], namespace: "common" },
    { name: "NewPhone", parents: ["Phone"], namespace: "common" },
    { name: "NewCustomer", parents: ["Element"], namespace: "common" },
    { name: "PhoneBrand", parents: ["Element"], namespace: "common" },
    { name: "Measure", parents: ["Element"], namespace: "dm-dw" },
    { name: "Dimension", parents: ["Element"], namespace: "dm-dw" },
  ],
  relations: [
    { name: "relatedTo", domain: "Finding", range: "Element" },
    { name: "hasValue", domain: "Finding", range: "decimal" },
    { name: "hasUnit", domain: "Finding", range: "string" },
    { name: "hasCharacteristic", domain: "Phone", range: "PhoneBrand" },
    { name: "dateOfAppearance", domain: "NewPhone", range: "date" },
  ],
  templates: [
    {
      name: "GeneralFinding",
      condition: [
        {
          slot: "x",
          roots: ["DomainSpecificElement", "Finding"],
          min: 1,
          options: [
            "Finding",
            "Increase",
            "DiscountPrice",
            "Phone",
            "NewPhone",
            "NewCustomer",
            "PhoneBrand",
          ],
        },
      ],
      result: [
        {
          slot: "y",
          roots: ["Finding"],
          min: 1,
          options: ["Finding", "Increase", "DiscountPrice"],
        },
      ],
    },
  ],
  options: {
    properties_by_class: {
      Finding: ["hasUnit", "hasValue", "relatedTo"],
      Increase: ["hasUnit", "hasValue", "relatedTo"],
      DiscountPrice: ["hasUnit", "hasValue", "relatedTo"],
      Phone: ["hasCharacteristic"],
      NewPhone: ["dateOfAppearance", "hasCharacteristic"],
    },
    object_options: {
      relatedTo: ["Dimension", "Measure", "NewCustomer", "NewPhone", "Phone", "PhoneBrand"],
      hasCharacteristic: ["PhoneBrand"],
    },
    phrases: {
      relatedTo: "related to",
      hasCharacteristic: "characteristic",
      dateOfAppearance: "date of appearance",
      hasValue: "value",
      hasUnit: "unit",
    },
    operators: {
      date: ["equals", "greater than", "less than"],
      decimal: ["equals", "greater than", "less than"],
      string: ["equals"],
    },
  },
  severities: ["Notification", "Warning", "CriticalAlert"],
  revision: 0,
};

export function notification(
  overrides: Partial<NotificationRecord>,
): NotificationRecord {
  return {
    message_id: "msg-F1",
    user: "cmo",
    channel: "email",
    timestamp: "2010-04-01",
    tick: 1,
    rendering: "full",
    body: "FACTS\nCONCLUSION",
    status: "delivered",
    severity: "CriticalAlert",
    finding_id: "F1",
    ...overrides,
  };
}
